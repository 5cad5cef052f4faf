use rand::SeedableRng;
use rayon::prelude::*;

use super::augment::AugmentSpec;
use super::{Sample, Split};
use crate::error::{CmfError, Result};
use crate::CmfRng;

/// Per-class sample targets keyed by class name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BalanceTargets {
    pub train: Vec<(String, usize)>,
    pub val: Vec<(String, usize)>,
}

/// Four-class post-augmentation counts (train / validation).
pub fn dfuc2021_targets() -> BalanceTargets {
    let names = ["none", "infection", "ischaemia", "both"];
    BalanceTargets {
        train: names.iter().map(|n| n.to_string()).zip([3036, 3035, 2777, 3034]).collect(),
        val: names.iter().map(|n| n.to_string()).zip([1012, 1011, 925, 1011]).collect(),
    }
}

/// Two-class post-augmentation counts (train / validation).
pub fn binary_targets() -> BalanceTargets {
    let names = ["abnormal", "normal"];
    BalanceTargets {
        train: names.iter().map(|n| n.to_string()).zip([700, 700]).collect(),
        val: names.iter().map(|n| n.to_string()).zip([200, 200]).collect(),
    }
}

/// Maps named targets onto label indices. Classes without a target keep
/// their current count (`None`).
pub fn resolve_targets(named: &[(String, usize)], class_names: &[String]) -> Result<Vec<Option<usize>>> {
    let mut out = vec![None; class_names.len()];
    for (name, target) in named {
        let idx = class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CmfError::Data(format!("target for unknown class {name:?}")))?;
        out[idx] = Some(*target);
    }
    Ok(out)
}

/// Tops each class up to its target with augmented copies. Originals are
/// kept, in order, followed by the copies. Copy `j` of a class is made from
/// original `j mod n` (round-robin); its generator is seeded by `seed` on
/// stream `output index`, so results do not depend on thread scheduling.
/// `augmented_from` of a copy indexes the returned list.
pub fn balance_classes(
    samples: &[Sample],
    targets: &[Option<usize>],
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Vec<Sample>> {
    if let Some(s) = samples.iter().find(|s| s.split == Some(Split::Test)) {
        return Err(CmfError::Data(format!("refusing to augment test sample {}", s.source_path)));
    }
    let mut plan: Vec<(usize, usize)> = Vec::new();
    for (class, target) in targets.iter().enumerate() {
        let originals: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        let Some(target) = *target else { continue };
        if target < originals.len() {
            return Err(CmfError::Data(format!(
                "class {class} already has {} samples, above its target {target}",
                originals.len()
            )));
        }
        if originals.is_empty() && target > 0 {
            return Err(CmfError::Data(format!("class {class} has no samples to augment")));
        }
        for j in 0..target - originals.len() {
            plan.push((class, originals[j % originals.len()]));
        }
    }
    let base = samples.len();
    let copies: Vec<Sample> = plan
        .par_iter()
        .enumerate()
        .map(|(j, &(_, src))| {
            let mut rng = CmfRng::seed_from_u64(seed);
            rng.set_stream((base + j) as u64);
            let orig = &samples[src];
            let image = spec.draw(&mut rng).apply(&orig.image, spec.size)?;
            Ok(Sample {
                image,
                label: orig.label,
                source_path: orig.source_path.clone(),
                augmented_from: Some(src),
                split: orig.split,
                fold: orig.fold,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(base + copies.len());
    out.extend(samples.iter().map(|s| {
        let mut s = s.clone();
        if s.image.shape()[1..] != [spec.size, spec.size] {
            s.image = super::augment::resize_bilinear(&s.image, spec.size, spec.size).expect("non-empty image");
        }
        s
    }));
    out.extend(copies);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn samples(counts: &[usize]) -> Vec<Sample> {
        let mut out = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let img = Tensor::full(&[3, 4, 4], (i % 10) as f32 / 10.0);
                let mut s = Sample::new(img, label, format!("c{label}/{i}.png"));
                s.split = Some(Split::Train);
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn class_at_target_is_unchanged() {
        let s = samples(&[3, 2]);
        let out = balance_classes(&s, &[Some(3), None], &AugmentSpec::new(4), 0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn round_robin_use_counts() {
        let s = samples(&[135]);
        let out = balance_classes(&s, &[Some(2777)], &AugmentSpec::new(4), 0).unwrap();
        assert_eq!(out.len(), 2777);
        let mut uses = vec![0; 135];
        for x in &out[135..] {
            uses[x.augmented_from.unwrap()] += 1;
        }
        assert_eq!(out[135..].len(), 2642);
        assert!(uses.iter().all(|&u| u == 19 || u == 20));
        assert_eq!(uses.iter().filter(|&&u| u == 20).count(), 2642 - 19 * 135);
        assert_eq!(&out[..135], &s[..]);
    }

    #[test]
    fn errors() {
        let s = samples(&[4]);
        assert!(balance_classes(&s, &[Some(3)], &AugmentSpec::new(4), 0).is_err());
        let mut t = samples(&[2]);
        t[0].split = Some(Split::Test);
        assert!(balance_classes(&t, &[Some(5)], &AugmentSpec::new(4), 0).is_err());
        assert!(resolve_targets(&[("x".into(), 3)], &["a".into()]).is_err());
    }

    #[test]
    fn named_targets_resolve() {
        let names: Vec<String> = ["both", "infection", "ischaemia", "none"].iter().map(|s| s.to_string()).collect();
        let t = resolve_targets(&dfuc2021_targets().train, &names).unwrap();
        assert_eq!(t, vec![Some(3034), Some(3035), Some(2777), Some(3036)]);
    }
}

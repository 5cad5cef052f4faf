//! Parameter and multiply-accumulate accounting by module.

use std::io::Write;

use serde::Serialize;

use super::assembly::ConMatFormer;
use crate::blocks::{Cbam, DW_KERNEL, EXPANSION, PATCH, SPATIAL_KERNEL};
use crate::error::Result;
use crate::tensor::Element;

/// Published figures for the full-size network at 224 pixels.
pub const REFERENCE_TOTAL_PARAMS: usize = 36_330_000;
pub const REFERENCE_TOTAL_MACS: usize = 391_950_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRow {
    pub module: String,
    pub name: String,
    pub params: usize,
    pub macs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub input_size: usize,
    pub rows: Vec<ParamRow>,
    pub total_params: usize,
    pub total_macs: usize,
}

impl ParamReport {
    pub fn module_params(&self, module: &str) -> usize {
        self.rows.iter().filter(|r| r.module == module).map(|r| r.params).sum()
    }

    pub fn row(&self, module: &str, name: &str) -> Option<&ParamRow> {
        self.rows.iter().find(|r| r.module == module && r.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

fn block_macs(c: usize, hw: usize) -> usize {
    c * DW_KERNEL * DW_KERNEL * hw + 2 * hw * c * EXPANSION * c
}

fn cbam_macs(cbam: &Cbam, hw: usize) -> usize {
    let c = cbam.channels;
    let hidden = c / cbam.reduction;
    2 * (c * hidden + hidden * c) + 2 * SPATIAL_KERNEL * SPATIAL_KERNEL * hw
}

fn danet_macs(c: usize, n: usize) -> usize {
    // Three pointwise projections, B·Cᵀ energy, D·Sᵀ context, A·Aᵀ and X·A.
    3 * c * c * n + 2 * n * n * c + 2 * c * c * n
}

/// Exact parameter census and analytic MAC count at the model's input size.
/// Convolution: `C_out · C_in/g · kh · kw · H' · W'`; linear: `d_in · d_out`
/// per row; attention: projections plus score and context products.
pub fn count_params_macs<T: Element>(model: &ConMatFormer<T>) -> ParamReport {
    let cfg = &model.config;
    let store = &model.params;
    let sizes = cfg.stage_sizes();
    let mut rows = Vec::new();
    let mut push = |module: &str, name: &str, params: usize, macs: usize| {
        rows.push(ParamRow { module: module.into(), name: name.into(), params, macs });
    };
    let sum = |names: &[&str]| names.iter().map(|n| store.by_name(n).map_or(0, |t| t.numel())).sum::<usize>();

    let c0 = cfg.stage_dims[0];
    let hw0 = sizes[0] * sizes[0];
    push("stem", "conv", sum(&["stem.conv_w", "stem.conv_b"]), c0 * 3 * PATCH * PATCH * hw0);
    push("stem", "ln", sum(&["stem.ln_gamma", "stem.ln_beta"]), 0);

    for (i, stage) in model.stages.iter().enumerate() {
        let module = format!("stage{}", i + 1);
        let c = cfg.stage_dims[i];
        let hw = sizes[i] * sizes[i];
        if stage.downsample.is_some() {
            let macs = c * cfg.stage_dims[i - 1] * 4 * hw;
            push(&module, "down", store.count_prefix(&format!("{module}.down")), macs);
        }
        for (b, _) in stage.blocks.iter().enumerate() {
            let name = format!("block{b}");
            push(&module, &name, store.count_prefix(&format!("{module}.{name}")), block_macs(c, hw));
        }
        if let Some(cbam) = &stage.cbam {
            push(&module, "cbam", store.count_prefix(&format!("{module}.cbam")), cbam_macs(cbam, hw));
        }
        if stage.danet.is_some() {
            push(&module, "danet", store.count_prefix(&format!("{module}.danet")), danet_macs(c, hw));
        }
    }

    let d = cfg.stage_dims[3];
    if let Some(s5) = &model.stage5 {
        let n = sizes[3] * sizes[3];
        let t = "stage5.transformer";
        let attn = sum(&[&format!("{t}.qkv_w"), &format!("{t}.qkv_b"), &format!("{t}.proj_w"), &format!("{t}.proj_b")]);
        push("stage5", "attention", attn, n * d * 3 * d + 2 * n * n * d + n * d * d);
        let mlp = sum(&[&format!("{t}.fc1_w"), &format!("{t}.fc1_b"), &format!("{t}.fc2_w"), &format!("{t}.fc2_b")]);
        push("stage5", "mlp", mlp, 2 * n * d * s5.block.dim * EXPANSION);
        let norms = sum(&[
            &format!("{t}.ln1_gamma"),
            &format!("{t}.ln1_beta"),
            &format!("{t}.ln2_gamma"),
            &format!("{t}.ln2_beta"),
            "stage5.ln_gamma",
            "stage5.ln_beta",
        ]);
        push("stage5", "ln", norms, 0);
        if s5.block.pos_embed.is_some() {
            push("stage5", "pos_embed", sum(&[&format!("{t}.pos_embed")]), 0);
        }
    }

    push("head", "ln", sum(&["head.ln_gamma", "head.ln_beta"]), 0);
    push("head", "fc", sum(&["head.fc_w", "head.fc_b"]), d * cfg.num_classes);

    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    ParamReport { input_size: cfg.input_size, rows, total_params, total_macs }
}

/// Parameters of one ConvNeXt block at width `c`, with or without GRN.
pub fn convnext_block_params(c: usize, grn: bool) -> usize {
    let h = EXPANSION * c;
    let grn = if grn { 2 * h } else { 0 };
    c * DW_KERNEL * DW_KERNEL + c + 2 * c + c * h + h + h * c + c + c + grn
}

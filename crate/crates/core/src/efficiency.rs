//! Parameter and operation counts for the ensemble.
//!
//! Costs are taken from the layer walk of each model. Convolutions and
//! linear layers contribute multiply-accumulates; max pooling (one compare
//! per window element) and global average pooling (one add per input
//! element) contribute other operations. Normalization, activations and
//! element-wise tensor plumbing are not counted.

use std::collections::BTreeMap;

use fiqa_nn::layer::{LayerDesc, LayerKind};
use serde::{Deserialize, Serialize};

use crate::models::QualityModel;

/// Operation count per sample claimed for the two-model ensemble.
pub const REFERENCE_GFLOPS: f64 = 0.4985;
/// Parameter count claimed for the two-model ensemble.
pub const REFERENCE_PARAMS: f64 = 2.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MacConvention {
    MacAsOneFlop,
    MacAsTwoFlops,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCount {
    pub macs: u64,
    pub other_ops: u64,
    /// Layers with no cost rule; counted as zero.
    pub unsupported: Vec<String>,
}

impl OpCount {
    pub fn flops(&self, convention: MacConvention) -> u64 {
        match convention {
            MacConvention::MacAsOneFlop => self.macs + self.other_ops,
            MacConvention::MacAsTwoFlops => 2 * self.macs + self.other_ops,
        }
    }

    fn add(&mut self, other: &OpCount) {
        self.macs += other.macs;
        self.other_ops += other.other_ops;
        self.unsupported.extend(other.unsupported.iter().cloned());
    }
}

/// `(macs, other_ops)` of one layer, `None` when no rule applies.
pub fn layer_cost(d: &LayerDesc) -> Option<(u64, u64)> {
    let numel = |s: &[usize]| s.iter().product::<usize>() as u64;
    match &d.kind {
        LayerKind::Conv2d {
            in_channels,
            kernel,
            groups,
            ..
        } => {
            let per_output = (*in_channels / *groups * kernel * kernel) as u64;
            Some((numel(&d.output) * per_output, 0))
        }
        LayerKind::Linear {
            in_features,
            out_features,
            ..
        } => Some(((in_features * out_features) as u64, 0)),
        LayerKind::MaxPool { kernel, .. } => Some((0, numel(&d.output) * (kernel * kernel) as u64)),
        LayerKind::GlobalAvgPool => Some((0, numel(&d.input))),
        LayerKind::BatchNorm { .. }
        | LayerKind::Activation(_)
        | LayerKind::Dropout { .. }
        | LayerKind::ChannelScale
        | LayerKind::ResidualAdd
        | LayerKind::ChannelSplit
        | LayerKind::ChannelConcat
        | LayerKind::ChannelShuffle { .. } => Some((0, 0)),
        LayerKind::Opaque { .. } => None,
    }
}

/// Sum the cost of a layer walk, warning about layers without a rule.
pub fn count_ops(layers: &[LayerDesc]) -> OpCount {
    let mut total = OpCount::default();
    for d in layers {
        match layer_cost(d) {
            Some((m, o)) => {
                total.macs += m;
                total.other_ops += o;
            }
            None => {
                log::warn!("no cost rule for layer {} ({:?}); counted as zero", d.name, d.kind);
                total.unsupported.push(d.name.clone());
            }
        }
    }
    total
}

/// Trainable parameter counts keyed `<backbone>.backbone` / `<backbone>.head`.
pub fn count_params(model: &QualityModel) -> BTreeMap<String, u64> {
    let g = model.parameter_groups();
    let id = model.spec().backbone.id();
    BTreeMap::from([
        (format!("{id}.backbone"), g.backbone_count() as u64),
        (format!("{id}.head"), g.head_count() as u64),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub backbone: String,
    pub params: u64,
    pub ops: OpCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub input_size: [usize; 2],
    pub tta_views: usize,
    pub per_component_params: BTreeMap<String, u64>,
    pub total_params: u64,
    pub param_deviation_pct: f64,
    pub per_model: Vec<ModelCost>,
    pub macs: u64,
    pub other_ops: u64,
    pub gflops_mac_as_one: f64,
    pub gflops_mac_as_two: f64,
    pub deviation_pct_mac_as_one: f64,
    pub deviation_pct_mac_as_two: f64,
    /// Convention whose figure lies nearer the reference.
    pub convention: MacConvention,
    /// GFLOPs per sample under `convention`.
    pub flops_per_sample: f64,
    pub unsupported_layers: Vec<String>,
}

fn deviation_pct(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Audit `models` for one sample at their configured input size, multiplied
/// by `tta_views` forward passes.
pub fn estimate_flops(models: &[&QualityModel], tta_views: usize) -> EfficiencyReport {
    let mut per_component_params = BTreeMap::new();
    let mut per_model = Vec::new();
    let mut total = OpCount::default();
    for m in models {
        let params = count_params(m);
        let n: u64 = params.values().sum();
        per_component_params.extend(params);
        let ops = count_ops(&m.describe_layers());
        total.add(&ops);
        per_model.push(ModelCost {
            backbone: m.spec().backbone.id().to_string(),
            params: n,
            ops,
        });
    }
    let views = tta_views.max(1) as u64;
    total.macs *= views;
    total.other_ops *= views;
    let g1 = total.flops(MacConvention::MacAsOneFlop) as f64 / 1e9;
    let g2 = total.flops(MacConvention::MacAsTwoFlops) as f64 / 1e9;
    let (d1, d2) = (deviation_pct(g1, REFERENCE_GFLOPS), deviation_pct(g2, REFERENCE_GFLOPS));
    let (convention, flops_per_sample) = if d1.abs() <= d2.abs() {
        (MacConvention::MacAsOneFlop, g1)
    } else {
        (MacConvention::MacAsTwoFlops, g2)
    };
    let total_params: u64 = per_component_params.values().sum();
    let input_size = models
        .first()
        .map(|m| [m.input_size().0, m.input_size().1])
        .unwrap_or([0, 0]);
    EfficiencyReport {
        input_size,
        tta_views: views as usize,
        per_component_params,
        total_params,
        param_deviation_pct: deviation_pct(total_params as f64, REFERENCE_PARAMS),
        per_model,
        macs: total.macs,
        other_ops: total.other_ops,
        gflops_mac_as_one: g1,
        gflops_mac_as_two: g2,
        deviation_pct_mac_as_one: d1,
        deviation_pct_mac_as_two: d2,
        convention,
        flops_per_sample,
        unsupported_layers: total.unsupported,
    }
}

impl EfficiencyReport {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "input {}x{}, {} view(s) per sample\n",
            self.input_size[0], self.input_size[1], self.tta_views
        ));
        for (k, v) in &self.per_component_params {
            s.push_str(&format!("  {k:<32} {v:>10}\n"));
        }
        s.push_str(&format!(
            "  {:<32} {:>10}  ({:+.2}% vs {:.1e})\n",
            "total params", self.total_params, self.param_deviation_pct, REFERENCE_PARAMS
        ));
        s.push_str(&format!(
            "  GFLOPs, MAC = 1 FLOP            {:>10.4}  ({:+.2}% vs {REFERENCE_GFLOPS})\n",
            self.gflops_mac_as_one, self.deviation_pct_mac_as_one
        ));
        s.push_str(&format!(
            "  GFLOPs, MAC = 2 FLOPs           {:>10.4}  ({:+.2}% vs {REFERENCE_GFLOPS})\n",
            self.gflops_mac_as_two, self.deviation_pct_mac_as_two
        ));
        s.push_str(&format!("  nearer convention: {:?}\n", self.convention));
        if !self.unsupported_layers.is_empty() {
            s.push_str(&format!("  uncounted layers: {}\n", self.unsupported_layers.join(", ")));
        }
        s
    }
}

//! The fixed-seed gradient check suite covering every differentiable block.
//!
//! Each block is reduced to a scalar with a fixed random projection of its
//! output, `f = Σ wᵢ·outᵢ`, so the backward pass runs with `grad_out = w` and
//! every input and parameter entry is probed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{grad_check_piecewise, sign_signature, GradCheckConfig, GradCheckReport};
use crate::detector::{compute_loss, BoxLossKind, DeepBlock, Detector, DetectorConfig, Target, Upsampler};
use crate::detector::train::loss_config;
use crate::error::Result;
use crate::eucb::{eucb_backward, eucb_forward, EucbParams};
use crate::geometry::{iou_loss, nwd_loss, BBox, BoxLoss, NwdConfig, NwdMode};
use crate::msfa::{msfa_backward, msfa_forward_cached, MsfaParams};
use crate::params::Parameters;
use crate::rng::{self, StreamRng};
use crate::tensor::{
    activation, activation_backward, batchnorm, batchnorm_backward, concat_channels, conv2d,
    conv2d_backward, conv2d_strided, conv2d_strided_backward, eltwise, eltwise_backward,
    split_channels, upsample2x, upsample2x_backward, Activation, BatchNormState, BnMode, ConvParams,
    Eltwise, FeatureMap, Shape4, UpsampleMode,
};

/// Tolerance for blocks without batch statistics.
pub const PURE_TOLERANCE: f64 = 1e-6;
/// Tolerance for blocks coupled through train-mode batch statistics, and for
/// the end-to-end detector loss.
pub const COUPLED_TOLERANCE: f64 = 1e-5;
/// Largest share of probes that may be skipped as kink-straddling.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;
pub const DEFAULT_INSTANCES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockResult {
    pub name: String,
    pub tolerance: f64,
    pub instances: usize,
    pub report: GradCheckReport,
}

impl BlockResult {
    pub fn passed(&self) -> bool {
        let total = self.report.probes + self.report.skipped;
        self.report.max_rel_err <= self.tolerance
            && self.report.probes > 0
            && (self.report.skipped as f64) <= MAX_SKIPPED_FRACTION * total as f64
    }
}

type Case = fn(u64, &GradCheckConfig) -> Result<GradCheckReport>;

/// `(name, tolerance, case)` for every checked block.
pub fn blocks() -> Vec<(&'static str, f64, Case)> {
    vec![
        ("conv2d_dense_3x3", PURE_TOLERANCE, conv_dense as Case),
        ("conv2d_depthwise_1x11", PURE_TOLERANCE, conv_dw_row),
        ("conv2d_depthwise_11x1", PURE_TOLERANCE, conv_dw_col),
        ("conv2d_stride2_3x3", PURE_TOLERANCE, conv_stride2),
        ("upsample_nearest", PURE_TOLERANCE, up_nearest),
        ("upsample_bilinear", PURE_TOLERANCE, up_bilinear),
        ("batchnorm_train", COUPLED_TOLERANCE, bn_train),
        ("batchnorm_eval", PURE_TOLERANCE, bn_eval),
        ("relu", PURE_TOLERANCE, relu),
        ("sigmoid", PURE_TOLERANCE, sigmoid),
        ("eltwise_mul", PURE_TOLERANCE, mul),
        ("eltwise_add", PURE_TOLERANCE, add),
        ("concat_split", PURE_TOLERANCE, concat),
        ("msfa", PURE_TOLERANCE, msfa),
        ("eucb", COUPLED_TOLERANCE, eucb),
        ("iou_loss", PURE_TOLERANCE, iou_box),
        ("nwd_loss_canonical", PURE_TOLERANCE, nwd_canonical),
        ("nwd_loss_linear_clamp", PURE_TOLERANCE, nwd_linear),
        ("detector_loss_baseline", COUPLED_TOLERANCE, detector_baseline),
        ("detector_loss_full", COUPLED_TOLERANCE, detector_full),
    ]
}

/// Runs every block over `instances` seeds (`0..instances`).
pub fn run_suite(instances: usize, cfg: &GradCheckConfig) -> Result<Vec<BlockResult>> {
    blocks()
        .into_iter()
        .map(|(name, tolerance, case)| run_block(name, tolerance, case, instances, cfg))
        .collect()
}

pub fn run_block(name: &str, tolerance: f64, case: Case, instances: usize, cfg: &GradCheckConfig) -> Result<BlockResult> {
    let mut report = GradCheckReport::empty();
    for seed in 0..instances as u64 {
        report.merge(&case(seed, cfg)?);
    }
    Ok(BlockResult {
        name: name.into(),
        tolerance,
        instances,
        report,
    })
}

fn case_rng(seed: u64, name: &str) -> StreamRng {
    rng::labeled(seed, name)
}

fn random_map(r: &mut StreamRng, shape: Shape4) -> FeatureMap<f64> {
    FeatureMap::from_vec(shape, rng::centered_uniform(r, shape.len(), 1.0)).expect("length matches")
}

/// Entries bounded away from zero, so that the ReLU kink is never probed.
fn nonzero_map(r: &mut StreamRng, shape: Shape4) -> FeatureMap<f64> {
    random_map(r, shape).map(|v| if v >= 0.0 { 0.1 + 0.9 * v } else { -0.1 + 0.9 * v })
}

/// Compensated (Neumaier) dot product; plain summation noise over a few
/// thousand terms would dominate the difference quotient.
fn dot(a: &FeatureMap<f64>, w: &FeatureMap<f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.data().iter().zip(w.data()) {
        let v = x * y;
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn with_data(m: &FeatureMap<f64>, data: &[f64]) -> FeatureMap<f64> {
    FeatureMap::from_vec(m.shape(), data.to_vec()).expect("length matches")
}

fn concat_flat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Checks a block `out = g(x, params)` with parameters living in `P`.
fn check_block<P, F, B>(
    x: &FeatureMap<f64>,
    params: &P,
    out_shape: Shape4,
    r: &mut StreamRng,
    cfg: &GradCheckConfig,
    forward: F,
    backward: B,
) -> Result<GradCheckReport>
where
    P: Parameters<f64> + Clone,
    F: Fn(&FeatureMap<f64>, &P) -> Result<(FeatureMap<f64>, u64)>,
    B: Fn(&FeatureMap<f64>, &P, &FeatureMap<f64>) -> Result<(FeatureMap<f64>, P)>,
{
    let w = random_map(r, out_shape);
    let (gx, gp) = backward(x, params, &w)?;
    let point = concat_flat(&[x.data(), &params.flatten()]);
    let analytic = concat_flat(&[gx.data(), &gp.flatten()]);
    let nx = x.len();
    let mut scratch = params.clone();
    grad_check_piecewise(
        |v| {
            let xi = with_data(x, &v[..nx]);
            scratch.assign_flat(&v[nx..]);
            let (out, sig) = forward(&xi, &scratch)?;
            Ok((dot(&out, &w), sig))
        },
        &point,
        &analytic,
        cfg,
    )
}

/// Parameter-free block.
#[derive(Clone)]
struct NoParams;

impl Parameters<f64> for NoParams {
    fn tensors(&self) -> Vec<crate::params::NamedTensor<'_, f64>> {
        Vec::new()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

fn conv_case(
    seed: u64,
    cfg: &GradCheckConfig,
    label: &str,
    (in_c, out_c, groups): (usize, usize, usize),
    kernel: (usize, usize),
    padding: (usize, usize),
    stride: usize,
) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, label);
    let x = random_map(&mut r, Shape4::new(2, in_c, 7, 13));
    let p = ConvParams::init(&mut r, in_c, out_c, kernel, groups, padding, true)?;
    let out_shape = p.output_shape(x.shape(), stride)?;
    check_block(
        &x,
        &p,
        out_shape,
        &mut r,
        cfg,
        |x, p| Ok((conv2d_strided(x, p, stride)?, 0)),
        |x, p, g| {
            let cg = conv2d_strided_backward(x, p, stride, g)?;
            let mut gp = p.zeros_like();
            gp.accumulate(&cg.kernel, cg.bias.as_deref());
            Ok((cg.input, gp))
        },
    )
}

fn conv_dense(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "conv_dense");
    let x = random_map(&mut r, Shape4::new(2, 3, 6, 7));
    let p = ConvParams::init(&mut r, 3, 4, (3, 3), 1, (1, 1), true)?;
    let out_shape = p.output_shape(x.shape(), 1)?;
    check_block(
        &x,
        &p,
        out_shape,
        &mut r,
        cfg,
        |x, p| Ok((conv2d(x, p)?, 0)),
        |x, p, g| {
            let cg = conv2d_backward(x, p, g)?;
            let mut gp = p.zeros_like();
            gp.accumulate(&cg.kernel, cg.bias.as_deref());
            Ok((cg.input, gp))
        },
    )
}

fn conv_dw_row(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    conv_case(seed, cfg, "conv_dw_row", (3, 3, 3), (1, 11), (0, 5), 1)
}

fn conv_dw_col(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    conv_case(seed, cfg, "conv_dw_col", (3, 3, 3), (11, 1), (5, 0), 1)
}

fn conv_stride2(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    conv_case(seed, cfg, "conv_stride2", (2, 3, 1), (3, 3), (1, 1), 2)
}

fn up_case(seed: u64, cfg: &GradCheckConfig, mode: UpsampleMode) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "upsample");
    let x = random_map(&mut r, Shape4::new(2, 2, 3, 5));
    let s = x.shape();
    check_block(
        &x,
        &NoParams,
        Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w),
        &mut r,
        cfg,
        |x, _| Ok((upsample2x(x, mode)?, 0)),
        |x, _, g| Ok((upsample2x_backward(x.shape(), mode, g)?, NoParams)),
    )
}

fn up_nearest(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    up_case(seed, cfg, UpsampleMode::Nearest)
}

fn up_bilinear(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    up_case(seed, cfg, UpsampleMode::Bilinear)
}

fn bn_case(seed: u64, cfg: &GradCheckConfig, mode: BnMode) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "batchnorm");
    let x = random_map(&mut r, Shape4::new(2, 3, 4, 5));
    let mut s = BatchNormState::new(3);
    s.gamma = rng::centered_uniform(&mut r, 3, 1.0);
    s.beta = rng::centered_uniform(&mut r, 3, 1.0);
    s.running_mean = rng::centered_uniform(&mut r, 3, 0.5);
    s.running_var = rng::centered_uniform::<f64>(&mut r, 3, 0.5).iter().map(|v| 1.0 + v).collect();
    s.mode = mode;
    check_block(
        &x,
        &s,
        x.shape(),
        &mut r,
        cfg,
        |x, s| Ok((batchnorm(x, s)?.0, 0)),
        |x, s, g| {
            let (_, cache) = batchnorm(x, s)?;
            let bg = batchnorm_backward(s, &cache, g)?;
            let mut gs = s.clone();
            gs.gamma = bg.gamma;
            gs.beta = bg.beta;
            Ok((bg.input, gs))
        },
    )
}

fn bn_train(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    bn_case(seed, cfg, BnMode::Train)
}

fn bn_eval(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    bn_case(seed, cfg, BnMode::Eval)
}

fn act_case(seed: u64, cfg: &GradCheckConfig, kind: Activation) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "activation");
    let x = nonzero_map(&mut r, Shape4::new(2, 3, 4, 4)).map(|v| 4.0 * v);
    check_block(
        &x,
        &NoParams,
        x.shape(),
        &mut r,
        cfg,
        |x, _| Ok((activation(x, kind)?, sign_signature(0, x.data()))),
        |x, _, g| {
            let y = activation(x, kind)?;
            Ok((activation_backward(x, &y, kind, g)?, NoParams))
        },
    )
}

fn relu(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    act_case(seed, cfg, Activation::Relu)
}

fn sigmoid(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    act_case(seed, cfg, Activation::Sigmoid)
}

/// Two same-shape operands packed along the batch axis.
fn binary_case(
    seed: u64,
    cfg: &GradCheckConfig,
    forward: fn(&FeatureMap<f64>, &FeatureMap<f64>) -> Result<FeatureMap<f64>>,
    backward: fn(&FeatureMap<f64>, &FeatureMap<f64>, &FeatureMap<f64>) -> Result<(FeatureMap<f64>, FeatureMap<f64>)>,
) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "binary");
    let half = Shape4::new(2, 3, 4, 5);
    let x = random_map(&mut r, Shape4::new(4, 3, 4, 5));
    let split = |x: &FeatureMap<f64>| -> Result<(FeatureMap<f64>, FeatureMap<f64>)> {
        Ok((x.batch_slice(0, 2)?, x.batch_slice(2, 2)?))
    };
    let w = random_map(&mut r, half);
    let (a, b) = split(&x)?;
    let (ga, gb) = backward(&a, &b, &w)?;
    let analytic = concat_flat(&[ga.data(), gb.data()]);
    grad_check_piecewise(
        |v| {
            let (a, b) = split(&with_data(&x, v))?;
            Ok((dot(&forward(&a, &b)?, &w), 0))
        },
        x.data(),
        &analytic,
        cfg,
    )
}

fn mul(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    binary_case(
        seed,
        cfg,
        |a, b| eltwise(a, b, Eltwise::Mul),
        |a, b, g| eltwise_backward(a, b, Eltwise::Mul, g),
    )
}

fn add(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    binary_case(
        seed,
        cfg,
        |a, b| eltwise(a, b, Eltwise::Add),
        |a, b, g| eltwise_backward(a, b, Eltwise::Add, g),
    )
}

/// Concatenation of three channel groups; the backward is the split.
fn concat(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "concat");
    let x = random_map(&mut r, Shape4::new(2, 6, 3, 4));
    let widths = [1usize, 3, 2];
    check_block(
        &x,
        &NoParams,
        x.shape(),
        &mut r,
        cfg,
        |x, _| {
            let parts = split_channels(x, &widths)?;
            // reversed order, so the check is not an identity
            Ok((concat_channels(&[&parts[2], &parts[0], &parts[1]])?, 0))
        },
        |_, _, g| {
            let parts = split_channels(g, &[2, 1, 3])?;
            Ok((concat_channels(&[&parts[1], &parts[2], &parts[0]])?, NoParams))
        },
    )
}

fn msfa(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "msfa");
    let x = random_map(&mut r, Shape4::new(1, 8, 16, 16));
    let p = MsfaParams::<f64>::default_init(8, seed)?;
    check_block(
        &x,
        &p,
        x.shape(),
        &mut r,
        cfg,
        |x, p| Ok((msfa_forward_cached(x, p)?.0, 0)),
        |x, p, g| {
            let (_, cache) = msfa_forward_cached(x, p)?;
            msfa_backward(p, &cache, g)
        },
    )
}

fn eucb(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, "eucb");
    let x = random_map(&mut r, Shape4::new(1, 6, 8, 8));
    let mode = if seed % 2 == 0 {
        UpsampleMode::Nearest
    } else {
        UpsampleMode::Bilinear
    };
    let mut p = EucbParams::<f64>::init(6, 4, mode, seed)?;
    p.bn.gamma = rng::centered_uniform::<f64>(&mut r, 6, 0.5).iter().map(|v| 1.0 + v).collect();
    p.bn.beta = rng::centered_uniform(&mut r, 6, 0.5);
    check_block(
        &x,
        &p,
        Shape4::new(1, 4, 16, 16),
        &mut r,
        cfg,
        |x, p| {
            let (out, cache) = eucb_forward(x, p)?;
            Ok((out, cache.relu_signature(0)))
        },
        |x, p, g| {
            let (_, cache) = eucb_forward(x, p)?;
            eucb_backward(p, &cache, g)
        },
    )
}

fn random_box(r: &mut StreamRng) -> BBox {
    BBox::new(
        rng::uniform(r, 0.0, 30.0),
        rng::uniform(r, 0.0, 30.0),
        rng::uniform(r, 1.0, 16.0),
        rng::uniform(r, 1.0, 16.0),
    )
}

fn box_case(seed: u64, cfg: &GradCheckConfig, label: &str, loss: impl Fn(&BBox, &BBox) -> BoxLoss) -> Result<GradCheckReport> {
    let mut r = case_rng(seed, label);
    let mut report = GradCheckReport::empty();
    for _ in 0..10 {
        let gt = random_box(&mut r);
        // keep the prediction overlapping the target most of the time
        let pred = BBox::new(
            gt.cx + rng::uniform::<f64>(&mut r, -4.0, 4.0),
            gt.cy + rng::uniform::<f64>(&mut r, -4.0, 4.0),
            gt.w * rng::uniform::<f64>(&mut r, 0.5, 2.0),
            gt.h * rng::uniform::<f64>(&mut r, 0.5, 2.0),
        );
        let analytic = loss(&pred, &gt).grad;
        report.merge(&grad_check_piecewise(
            |v| Ok((loss(&BBox::from_array([v[0], v[1], v[2], v[3]]), &gt).loss, 0)),
            &pred.to_array(),
            &analytic,
            cfg,
        )?);
    }
    Ok(report)
}

fn iou_box(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    box_case(seed, cfg, "iou_loss", iou_loss)
}

fn nwd_canonical(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let c = NwdConfig::default();
    box_case(seed, cfg, "nwd_canonical", move |p, g| nwd_loss(p, g, &c))
}

fn nwd_linear(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    // large normalizer keeps the normalized distance inside the unclamped range
    let c = NwdConfig {
        c_norm: 200.0,
        mode: NwdMode::LinearClamp,
    };
    box_case(seed, cfg, "nwd_linear", move |p, g| nwd_loss(p, g, &c))
}

/// A detector shrunk to a `32×32` input, checked end to end through the
/// detection loss with respect to every parameter.
fn detector_case(seed: u64, cfg: &GradCheckConfig, full: bool) -> Result<GradCheckReport> {
    let dcfg = DetectorConfig {
        input_size: 32,
        num_classes: 3,
        stem_widths: [3, 4, 6],
        neck_width: 5,
        deep_block: if full { DeepBlock::Msfa } else { DeepBlock::PlainConv },
        upsampler: if full { Upsampler::Eucb } else { Upsampler::Plain },
        box_loss: if full {
            BoxLossKind::Nwd(NwdConfig::for_input_side(32, NwdMode::CanonicalExp))
        } else {
            BoxLossKind::Iou
        },
        msfa_kernels: vec![5, 3],
        seed,
        ..DetectorConfig::default()
    };
    let mut model = Detector::<f64>::build(&dcfg)?;
    model.set_mode(BnMode::Train);
    let mut r = case_rng(seed, "detector");
    // perturb the head away from its prior so every term is exercised
    for v in model.head.kernel.data_mut() {
        *v += rng::uniform::<f64>(&mut r, -0.5, 0.5);
    }
    let x = FeatureMap::from_vec(
        Shape4::new(1, 1, 32, 32),
        (0..1024).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect(),
    )?;
    let targets = vec![vec![
        Target { class_id: 0, bbox: BBox::new(7.3, 9.1, 5.0, 4.0) },
        Target { class_id: 2, bbox: BBox::new(22.6, 18.4, 3.0, 6.5) },
        Target { class_id: 1, bbox: BBox::new(14.2, 27.7, 8.0, 3.5) },
    ]];
    let lcfg = loss_config(&dcfg);
    let (head, cache) = model.forward_cached(&x)?;
    let (_, grad_head) = compute_loss(&head, &targets, &lcfg)?;
    let analytic = model.backward(&cache, &grad_head)?.flatten();
    let mut scratch = model.clone();
    grad_check_piecewise(
        |v| {
            scratch.assign_flat(v);
            let (head, cache) = scratch.forward_cached(&x)?;
            Ok((compute_loss(&head, &targets, &lcfg)?.0.total, cache.relu_signature()))
        },
        &model.flatten(),
        &analytic,
        cfg,
    )
}

fn detector_baseline(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    detector_case(seed, cfg, false)
}

fn detector_full(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    detector_case(seed, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_passes_on_two_seeds() {
        for (name, tol, case) in blocks() {
            let r = run_block(name, tol, case, 2, &GradCheckConfig::default()).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn broken_backward_is_caught() {
        let mut r = case_rng(0, "broken");
        let x = random_map(&mut r, Shape4::new(1, 2, 3, 3));
        let rep = check_block(
            &x,
            &NoParams,
            x.shape(),
            &mut r,
            &GradCheckConfig::default(),
            |x, _| Ok((x.map(|v| v * v), 0)),
            |x, _, g| Ok((FeatureMap::from_fn(x.shape(), |i| g.data()[i] * x.data()[i]), NoParams)),
        )
        .unwrap();
        assert!(rep.max_rel_err > 0.4);
    }
}

use alloc::vec::Vec;

use super::config::{DeepBlock, DetectorConfig, Upsampler};
use crate::error::{Error, Result};
use crate::eucb::{eucb_backward, eucb_forward, EucbCache, EucbParams};
use crate::flops::{conv_macs, msfa_flops};
use crate::msfa::{msfa_backward, msfa_forward_cached, MsfaCache, MsfaParams};
use crate::params::{prefixed, NamedTensor, Parameters};
use crate::real::Real;
use crate::rng;
use crate::tensor::{
    accumulate, activation, activation_backward, concat_channels, conv2d, conv2d_backward,
    conv2d_strided, conv2d_strided_backward, split_channels, upsample2x, upsample2x_backward,
    Activation, BnMode, ConvParams, FeatureMap, UpsampleMode,
};

/// Initial logit of the objectness and class outputs (prior probability 0.01).
pub const PRIOR_LOGIT: f64 = -4.59511985013459;
/// Initial log-size bias of the box outputs (about 1.65 cells).
pub const SIZE_BIAS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum DeepStage<T> {
    PlainConv(ConvParams<T>),
    Msfa(MsfaParams<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum NeckUpsample<T> {
    Plain(UpsampleMode),
    Eucb(EucbParams<T>),
}

/// Stem (three stride-2 `3×3` convs) → deep stage at stride 8 → neck
/// (upsample to stride 4, concat with stride-4 stem features, `1×1` fuse) →
/// `1×1` head at stride 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector<T> {
    pub stem: [ConvParams<T>; 3],
    pub deep: DeepStage<T>,
    pub neck: NeckUpsample<T>,
    pub fuse: ConvParams<T>,
    pub head: ConvParams<T>,
}

/// A named group of parameter tensors; the unit of checkpoint sections.
pub struct Section<'a, T> {
    pub name: &'static str,
    pub tensors: Vec<NamedTensor<'a, T>>,
}

impl<T: Real> Detector<T> {
    /// Every section initializes from its own stream of `cfg.seed`, so the
    /// ablation toggles never perturb the other sections.
    pub fn build(cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.stem_widths;
        let seed = cfg.seed;
        let mut r = rng::labeled(seed, "stem");
        let stem = [
            ConvParams::init_relu(&mut r, 1, c1, (3, 3), (1, 1))?,
            ConvParams::init_relu(&mut r, c1, c2, (3, 3), (1, 1))?,
            ConvParams::init_relu(&mut r, c2, c3, (3, 3), (1, 1))?,
        ];
        let deep = match cfg.deep_block {
            DeepBlock::PlainConv => {
                let mut r = rng::labeled(seed, "deep_conv");
                DeepStage::PlainConv(ConvParams::init_relu(&mut r, c3, c3, (3, 3), (1, 1))?)
            }
            DeepBlock::Msfa => DeepStage::Msfa(MsfaParams::init(c3, &cfg.msfa_kernels, seed)?),
        };
        let (neck, up_c) = match cfg.upsampler {
            Upsampler::Plain => (NeckUpsample::Plain(cfg.plain_upsample_mode), c3),
            Upsampler::Eucb => (
                NeckUpsample::Eucb(EucbParams::init(c3, cfg.neck_width, cfg.eucb_upsample_mode, seed)?),
                cfg.neck_width,
            ),
        };
        let fuse = ConvParams::init_relu(&mut rng::labeled(seed, "neck"), up_c + c2, cfg.neck_width, (1, 1), (0, 0))?;
        let mut head = ConvParams::pointwise(&mut rng::labeled(seed, "head"), cfg.neck_width, cfg.head_channels())?;
        if let Some(b) = head.bias.as_mut() {
            b[0] = T::of(PRIOR_LOGIT);
            b[3] = T::of(SIZE_BIAS);
            b[4] = T::of(SIZE_BIAS);
            for v in b[5..].iter_mut() {
                *v = T::of(PRIOR_LOGIT);
            }
        }
        Ok(Self {
            stem,
            deep,
            neck,
            fuse,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    pub fn cast<U: Real>(&self) -> Detector<U> {
        fn conv<T: Real, U: Real>(p: &ConvParams<T>) -> ConvParams<U> {
            ConvParams {
                kernel: p.kernel.cast(),
                bias: p.bias.as_ref().map(|b| b.iter().map(|v| U::of(v.as_f64())).collect()),
                groups: p.groups,
                padding: p.padding,
            }
        }
        fn vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::of(x.as_f64())).collect()
        }
        Detector {
            stem: [conv(&self.stem[0]), conv(&self.stem[1]), conv(&self.stem[2])],
            deep: match &self.deep {
                DeepStage::PlainConv(p) => DeepStage::PlainConv(conv(p)),
                DeepStage::Msfa(m) => DeepStage::Msfa(MsfaParams {
                    branches: m
                        .branches
                        .iter()
                        .map(|b| crate::msfa::SeparablePair {
                            row: conv(&b.row),
                            col: conv(&b.col),
                        })
                        .collect(),
                    mix: conv(&m.mix),
                }),
            },
            neck: match &self.neck {
                NeckUpsample::Plain(m) => NeckUpsample::Plain(*m),
                NeckUpsample::Eucb(e) => NeckUpsample::Eucb(EucbParams {
                    dw: conv(&e.dw),
                    bn: crate::tensor::BatchNormState {
                        gamma: vec(&e.bn.gamma),
                        beta: vec(&e.bn.beta),
                        running_mean: vec(&e.bn.running_mean),
                        running_var: vec(&e.bn.running_var),
                        epsilon: U::of(e.bn.epsilon.as_f64()),
                        momentum: U::of(e.bn.momentum.as_f64()),
                        mode: e.bn.mode,
                    },
                    proj: conv(&e.proj),
                    upsample_mode: e.upsample_mode,
                }),
            },
            fuse: conv(&self.fuse),
            head: conv(&self.head),
        }
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        if let NeckUpsample::Eucb(e) = &mut self.neck {
            e.bn.mode = mode;
        }
    }

    pub fn deep_section_name(&self) -> &'static str {
        match self.deep {
            DeepStage::PlainConv(_) => "deep_conv",
            DeepStage::Msfa(_) => "msfa",
        }
    }

    /// Parameter tensors grouped by checkpoint section, in a fixed order.
    pub fn sections(&self) -> Vec<Section<'_, T>> {
        let mut stem = Vec::new();
        for (i, s) in self.stem.iter().enumerate() {
            stem.extend(prefixed(&alloc::format!("conv{i}"), s.tensors()));
        }
        let mut out = alloc::vec![Section { name: "stem", tensors: stem }];
        out.push(Section {
            name: self.deep_section_name(),
            tensors: match &self.deep {
                DeepStage::PlainConv(p) => p.tensors(),
                DeepStage::Msfa(m) => m.tensors(),
            },
        });
        if let NeckUpsample::Eucb(e) = &self.neck {
            out.push(Section {
                name: "eucb",
                tensors: e.tensors(),
            });
        }
        out.push(Section {
            name: "neck",
            tensors: prefixed("fuse", self.fuse.tensors()),
        });
        out.push(Section {
            name: "head",
            tensors: self.head.tensors(),
        });
        out
    }

    /// Batch-norm running statistics (not trained by the optimizer).
    pub fn buffers(&self) -> Vec<NamedTensor<'_, T>> {
        match &self.neck {
            NeckUpsample::Eucb(e) => alloc::vec![
                NamedTensor {
                    name: "eucb.bn.running_mean".into(),
                    dims: alloc::vec![e.bn.running_mean.len()],
                    data: &e.bn.running_mean,
                },
                NamedTensor {
                    name: "eucb.bn.running_var".into(),
                    dims: alloc::vec![e.bn.running_var.len()],
                    data: &e.bn.running_var,
                },
            ],
            NeckUpsample::Plain(_) => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        match &mut self.neck {
            NeckUpsample::Eucb(e) => alloc::vec![&mut e.bn.running_mean[..], &mut e.bn.running_var[..]],
            NeckUpsample::Plain(_) => Vec::new(),
        }
    }

    /// Head output `(n, 5 + K, H/4, W/4)` for a `(n, 1, H, W)` image batch.
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, ForwardCache<T>)> {
        if x.shape().c != 1 {
            return Err(Error::shape("detector input channels", 1, x.shape().c));
        }
        let mut stem_pre = Vec::with_capacity(3);
        let mut stem_out: Vec<FeatureMap<T>> = Vec::with_capacity(3);
        for (i, p) in self.stem.iter().enumerate() {
            let input = if i == 0 { x } else { &stem_out[i - 1] };
            let pre = conv2d_strided(input, p, 2)?;
            let out = activation(&pre, Activation::Relu)?;
            stem_pre.push(pre);
            stem_out.push(out);
        }
        let s3 = &stem_out[2];
        let (deep_out, deep) = match &self.deep {
            DeepStage::PlainConv(p) => {
                let pre = conv2d(s3, p)?;
                let out = activation(&pre, Activation::Relu)?;
                (out, DeepCache::Plain(pre))
            }
            DeepStage::Msfa(m) => {
                let (out, cache) = msfa_forward_cached(s3, m)?;
                (out, DeepCache::Msfa(cache))
            }
        };
        let (up, neck) = match &self.neck {
            NeckUpsample::Plain(mode) => (upsample2x(&deep_out, *mode)?, NeckCache::Plain),
            NeckUpsample::Eucb(e) => {
                let (out, cache) = eucb_forward(&deep_out, e)?;
                (out, NeckCache::Eucb(cache))
            }
        };
        let cat = concat_channels(&[&up, &stem_out[1]])?;
        let fuse_pre = conv2d(&cat, &self.fuse)?;
        let fuse_out = activation(&fuse_pre, Activation::Relu)?;
        let out = conv2d(&fuse_out, &self.head)?;
        Ok((
            out,
            ForwardCache {
                input: x.clone(),
                stem_pre,
                stem_out,
                deep,
                deep_out,
                neck,
                up_channels: up.shape().c,
                cat,
                fuse_pre,
                fuse_out,
            },
        ))
    }

    /// Parameter gradients for an upstream gradient on the head output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_head: &FeatureMap<T>) -> Result<Detector<T>> {
        let mut g = self.zeros_like();
        let head_g = conv2d_backward(&cache.fuse_out, &self.head, grad_head)?;
        g.head.accumulate(&head_g.kernel, head_g.bias.as_deref());
        let g_fuse_pre = activation_backward(&cache.fuse_pre, &cache.fuse_out, Activation::Relu, &head_g.input)?;
        let fuse_g = conv2d_backward(&cache.cat, &self.fuse, &g_fuse_pre)?;
        g.fuse.accumulate(&fuse_g.kernel, fuse_g.bias.as_deref());
        let skip_c = cache.cat.shape().c - cache.up_channels;
        let parts = split_channels(&fuse_g.input, &[cache.up_channels, skip_c])?;
        let (g_up, mut g_s2) = (&parts[0], parts[1].clone());

        let g_deep_out = match (&self.neck, &cache.neck, &mut g.neck) {
            (NeckUpsample::Plain(mode), NeckCache::Plain, _) => {
                upsample2x_backward(cache.deep_out.shape(), *mode, g_up)?
            }
            (NeckUpsample::Eucb(e), NeckCache::Eucb(c), NeckUpsample::Eucb(ge)) => {
                let (gx, grads) = eucb_backward(e, c, g_up)?;
                ge.dw.accumulate(grads.dw.kernel.data(), None);
                accumulate(&mut ge.bn.gamma, &grads.bn.gamma);
                accumulate(&mut ge.bn.beta, &grads.bn.beta);
                ge.proj.accumulate(grads.proj.kernel.data(), grads.proj.bias.as_deref());
                gx
            }
            _ => return Err(Error::Config("forward cache does not match the neck".into())),
        };

        let s3 = &cache.stem_out[2];
        let mut g_s3 = match (&self.deep, &cache.deep, &mut g.deep) {
            (DeepStage::PlainConv(p), DeepCache::Plain(pre), DeepStage::PlainConv(gp)) => {
                let g_pre = activation_backward(pre, &cache.deep_out, Activation::Relu, &g_deep_out)?;
                let cg = conv2d_backward(s3, p, &g_pre)?;
                gp.accumulate(&cg.kernel, cg.bias.as_deref());
                cg.input
            }
            (DeepStage::Msfa(m), DeepCache::Msfa(c), DeepStage::Msfa(gm)) => {
                let (gx, grads) = msfa_backward(m, c, &g_deep_out)?;
                for (dst, src) in gm.tensors_mut().into_iter().zip(grads.tensors()) {
                    accumulate(dst, src.data);
                }
                gx
            }
            _ => return Err(Error::Config("forward cache does not match the deep stage".into())),
        };

        // Stem, deepest first. The stride-4 output also feeds the neck.
        for i in (0..3).rev() {
            let g_out = if i == 1 {
                accumulate(g_s2.data_mut(), g_s3.data());
                &g_s2
            } else {
                &g_s3
            };
            let g_pre = activation_backward(&cache.stem_pre[i], &cache.stem_out[i], Activation::Relu, g_out)?;
            let input = if i == 0 { &cache.input } else { &cache.stem_out[i - 1] };
            let cg = conv2d_strided_backward(input, &self.stem[i], 2, &g_pre)?;
            g.stem[i].accumulate(&cg.kernel, cg.bias.as_deref());
            g_s3 = cg.input;
        }
        Ok(g)
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        if let (NeckUpsample::Eucb(e), NeckCache::Eucb(c)) = (&mut self.neck, &cache.neck) {
            e.bn.update_running(&c.bn);
        }
    }
}

impl<T: Real> Parameters<T> for Detector<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        self.sections()
            .into_iter()
            .flat_map(|s| prefixed(s.name, s.tensors))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for s in self.stem.iter_mut() {
            out.extend(s.tensors_mut());
        }
        match &mut self.deep {
            DeepStage::PlainConv(p) => out.extend(p.tensors_mut()),
            DeepStage::Msfa(m) => out.extend(m.tensors_mut()),
        }
        if let NeckUpsample::Eucb(e) = &mut self.neck {
            out.extend(e.tensors_mut());
        }
        out.extend(self.fuse.tensors_mut());
        out.extend(self.head.tensors_mut());
        out
    }
}

pub enum DeepCache<T> {
    Plain(FeatureMap<T>),
    Msfa(MsfaCache<T>),
}

pub enum NeckCache<T> {
    Plain,
    Eucb(EucbCache<T>),
}

/// Intermediate activations of one forward pass.
pub struct ForwardCache<T> {
    input: FeatureMap<T>,
    stem_pre: Vec<FeatureMap<T>>,
    stem_out: Vec<FeatureMap<T>>,
    deep: DeepCache<T>,
    deep_out: FeatureMap<T>,
    neck: NeckCache<T>,
    up_channels: usize,
    cat: FeatureMap<T>,
    fuse_pre: FeatureMap<T>,
    fuse_out: FeatureMap<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Hash of every ReLU activation pattern in the pass.
    pub fn relu_signature(&self) -> u64 {
        use crate::gradcheck::sign_signature;
        let mut h = rng::label_id("relu");
        for pre in &self.stem_pre {
            h = sign_signature(h, pre.data());
        }
        if let DeepCache::Plain(pre) = &self.deep {
            h = sign_signature(h, pre.data());
        }
        if let NeckCache::Eucb(c) = &self.neck {
            h = c.relu_signature(h);
        }
        sign_signature(h, self.fuse_pre.data())
    }
}

/// Multiply-accumulate count of one forward pass on a single image.
///
/// Convolutions count `out elements × taps × input channels per group`.
/// Bilinear interpolation counts 4 per output element, nearest 0; batch norm
/// counts 1 per element; the MSFA block follows [`msfa_flops`].
pub fn detector_macs(cfg: &DetectorConfig) -> u64 {
    let [c1, c2, c3] = cfg.stem_widths;
    let s = cfg.input_size;
    let (s2, s4, s8) = (s / 2, s / 4, s / 8);
    let mut macs = conv_macs(c1, s2, s2, 1, 3, 3)
        + conv_macs(c2, s4, s4, c1, 3, 3)
        + conv_macs(c3, s8, s8, c2, 3, 3);
    macs += match cfg.deep_block {
        DeepBlock::PlainConv => conv_macs(c3, s8, s8, c3, 3, 3),
        DeepBlock::Msfa => msfa_flops(c3, s8, s8, &cfg.msfa_kernels),
    };
    let interp = |mode: UpsampleMode| match mode {
        UpsampleMode::Nearest => 0,
        UpsampleMode::Bilinear => (4 * c3 * s4 * s4) as u64,
    };
    let up_c = match cfg.upsampler {
        Upsampler::Plain => {
            macs += interp(cfg.plain_upsample_mode);
            c3
        }
        Upsampler::Eucb => {
            macs += interp(cfg.eucb_upsample_mode)
                + conv_macs(c3, s4, s4, 1, 3, 3)
                + (c3 * s4 * s4) as u64
                + conv_macs(cfg.neck_width, s4, s4, c3, 1, 1);
            cfg.neck_width
        }
    };
    macs += conv_macs(cfg.neck_width, s4, s4, up_c + c2, 1, 1);
    macs + conv_macs(cfg.head_channels(), s4, s4, cfg.neck_width, 1, 1)
}

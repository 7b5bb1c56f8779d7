//! Detector checkpoints.
//!
//! `"SMEC"`, `u32` version, `u32` section count, then per section a `u32`
//! name length, the UTF-8 name, a `u64` payload length and the payload.
//! Parameter sections (`stem`, `msfa` or `deep_conv`, `eucb`, `neck`,
//! `head`) and `bn_running` hold a `u32` tensor count followed by, per tensor,
//! a `u32` name length, the name and a tensor snapshot. `optimizer` prefixes
//! the same tensor list (first and second moments) with the `u64` step count.
//! `config` is the TOML run configuration, `seed` a `u64`, and `metrics` the
//! per-epoch metrics CSV.

use std::io::{Read, Write};
use std::path::Path;

use sme_core::detector::{Adam, Detector, EpochMetrics};
use sme_core::params::Parameters;
use sme_core::tensor::BnMode;

use crate::config::RunConfig;
use crate::error::{at, Error, Result};
use crate::report::{metrics_table, parse_metrics, Table};
use crate::snapshot::{read_u32, read_u64, Snapshot};

pub const MAGIC: &[u8; 4] = b"SMEC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// 32-bit parameters, batch norm in eval mode.
    pub model: Detector<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub history: Vec<EpochMetrics>,
}

type NamedSnapshots = Vec<(String, Snapshot)>;

fn encode_tensors(tensors: &NamedSnapshots) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, snap) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        snap.write_to(&mut out).expect("writing to a Vec cannot fail");
    }
    out
}

fn decode_tensors(r: &mut impl Read) -> Result<NamedSnapshots> {
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = read_string(r)?;
        out.push((name, Snapshot::read_from(r)?));
    }
    Ok(out)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("name length {len} is implausible")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("name is not UTF-8".into()))
}

fn snapshots(tensors: Vec<sme_core::params::NamedTensor<'_, f32>>) -> NamedSnapshots {
    tensors
        .into_iter()
        .map(|t| (t.name, Snapshot { dims: t.dims, data: t.data.to_vec() }))
        .collect()
}

impl Checkpoint {
    /// Serialized sections in file order.
    pub fn sections(&self) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<(String, Vec<u8>)> = self
            .model
            .sections()
            .into_iter()
            .map(|s| (s.name.to_string(), encode_tensors(&snapshots(s.tensors))))
            .collect();
        out.push(("bn_running".into(), encode_tensors(&snapshots(self.model.buffers()))));
        if let Some(opt) = &self.optimizer {
            let names: Vec<String> = self.model.tensors().into_iter().map(|t| t.name).collect();
            let dims: Vec<Vec<usize>> = self.model.tensors().into_iter().map(|t| t.dims).collect();
            let mut tensors = Vec::new();
            for (moment, values) in [("m", &opt.m), ("v", &opt.v)] {
                for ((name, d), v) in names.iter().zip(&dims).zip(values) {
                    tensors.push((format!("{moment}.{name}"), Snapshot { dims: d.clone(), data: v.clone() }));
                }
            }
            let mut payload = opt.step.to_le_bytes().to_vec();
            payload.extend(encode_tensors(&tensors));
            out.push(("optimizer".into(), payload));
        }
        out.push(("config".into(), self.config.to_toml().into_bytes()));
        out.push(("seed".into(), self.config.run.seed.to_le_bytes().to_vec()));
        out.push(("metrics".into(), metrics_table(&self.history).to_csv().into_bytes()));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sections = self.sections();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, payload) in sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut sections = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let len = usize::try_from(read_u64(&mut r)?).map_err(|_| Error::Format("section too large".into()))?;
            if len > r.len() {
                return Err(Error::Format(format!("section {name} truncated")));
            }
            let (payload, rest) = r.split_at(len);
            sections.push((name, payload));
            r = rest;
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after the last section", r.len())));
        }
        let find = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::Format(format!("missing section {name}")))
        };
        let text = |name: &str| -> Result<String> {
            String::from_utf8(find(name)?.to_vec()).map_err(|_| Error::Format(format!("section {name} is not UTF-8")))
        };
        let config = RunConfig::parse(&text("config")?)?;
        let seed_bytes: [u8; 8] = find("seed")?
            .try_into()
            .map_err(|_| Error::Format("seed section must hold 8 bytes".into()))?;
        if u64::from_le_bytes(seed_bytes) != config.run.seed {
            return Err(Error::Format("seed section disagrees with the configuration".into()));
        }
        let mut model = Detector::<f32>::build(&config.detector_config())?;

        let mut params = Vec::new();
        for s in model.sections() {
            let stored = decode_tensors(&mut find(s.name)?)?;
            check_layout(s.name, &stored, &snapshots(s.tensors))?;
            params.extend(stored.into_iter().flat_map(|(_, t)| t.data));
        }
        model.assign_flat(&params);
        let stored = decode_tensors(&mut find("bn_running")?)?;
        check_layout("bn_running", &stored, &snapshots(model.buffers()))?;
        for (dst, (_, t)) in model.buffers_mut().into_iter().zip(stored) {
            dst.copy_from_slice(&t.data);
        }
        model.set_mode(BnMode::Eval);

        let optimizer = match sections.iter().find(|(n, _)| n == "optimizer") {
            None => None,
            Some((_, payload)) => {
                let mut p = *payload;
                let step = read_u64(&mut p)?;
                let stored = decode_tensors(&mut p)?;
                let mut expected = Vec::new();
                for moment in ["m", "v"] {
                    for t in model.tensors() {
                        expected.push((format!("{moment}.{}", t.name), Snapshot { dims: t.dims, data: vec![] }));
                    }
                }
                check_layout("optimizer", &stored, &expected)?;
                let half = stored.len() / 2;
                let mut values: Vec<Vec<f32>> = stored.into_iter().map(|(_, t)| t.data).collect();
                let v = values.split_off(half);
                Some(Adam {
                    cfg: config.detector_config().optimizer,
                    step,
                    m: values,
                    v,
                })
            }
        };
        let history = parse_metrics(&Table::parse(&text("metrics")?)?)?;
        Ok(Self {
            config,
            model,
            optimizer,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(at(path))?;
        f.write_all(&self.to_bytes()).map_err(at(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(at(path))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn check_layout(section: &str, stored: &NamedSnapshots, expected: &NamedSnapshots) -> Result<()> {
    let names = |v: &NamedSnapshots| v.iter().map(|(n, s)| (n.clone(), s.dims.clone())).collect::<Vec<_>>();
    if names(stored) != names(expected) {
        return Err(Error::Format(format!(
            "section {section}: stored tensors {:?} do not match the configured model {:?}",
            names(stored),
            names(expected)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlockName, UpsamplerName};

    fn small_config(msfa: bool) -> RunConfig {
        let mut c = RunConfig::default();
        c.data.image_size = 32;
        c.data.trace_pitch = 10;
        c.data.trace_width = 4;
        c.model.stem_widths = [2, 3, 4];
        c.model.neck_width = 5;
        c.model.msfa_kernels = vec![3, 5];
        if msfa {
            c.model.deep_block = BlockName::Msfa;
            c.model.upsampler = UpsamplerName::Eucb;
        }
        c
    }

    fn perturbed(cfg: &RunConfig) -> Checkpoint {
        let mut model = Detector::<f32>::build(&cfg.detector_config()).unwrap();
        for (i, b) in model.buffers_mut().into_iter().enumerate() {
            for (j, v) in b.iter_mut().enumerate() {
                *v = 0.1 * (i + j) as f32 + 1.0 / 3.0;
            }
        }
        let mut opt = Adam::new(cfg.detector_config().optimizer, &model);
        opt.step = 17;
        opt.m[0][0] = -1e-30;
        opt.v[1][0] = f32::MIN_POSITIVE;
        model.set_mode(BnMode::Eval);
        Checkpoint {
            config: cfg.clone(),
            model,
            optimizer: Some(opt),
            history: vec![EpochMetrics {
                epoch: 1,
                train_loss: 0.3,
                box_loss: 0.1,
                obj_loss: 0.1,
                cls_loss: 0.1,
                val_map50: 0.25,
            }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for msfa in [false, true] {
            let ck = perturbed(&small_config(msfa));
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            let bits = |m: &Detector<f32>| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.model), bits(&ck.model));
            assert_eq!(back.optimizer, ck.optimizer);
            assert_eq!(back.history, ck.history);
        }
    }

    #[test]
    fn section_names_follow_the_toggles() {
        let names = |msfa| perturbed(&small_config(msfa)).sections().into_iter().map(|s| s.0).collect::<Vec<_>>();
        assert_eq!(
            names(false),
            ["stem", "deep_conv", "neck", "head", "bn_running", "optimizer", "config", "seed", "metrics"]
        );
        assert_eq!(
            names(true),
            ["stem", "msfa", "eucb", "neck", "head", "bn_running", "optimizer", "config", "seed", "metrics"]
        );
    }

    #[test]
    fn msfa_toggle_changes_only_the_deep_section() {
        let a = small_config(false);
        let mut b = a.clone();
        b.model.deep_block = BlockName::Msfa;
        let sa = perturbed(&a).sections();
        let sb = perturbed(&b).sections();
        let param = |s: &[(String, Vec<u8>)]| s.iter().filter(|(n, _)| ["stem", "neck", "head"].contains(&n.as_str())).cloned().collect::<Vec<_>>();
        assert_eq!(param(&sa), param(&sb));
        assert_eq!(sa[1].0, "deep_conv");
        assert_eq!(sb[1].0, "msfa");
    }

    #[test]
    fn corruption_is_detected() {
        let ck = perturbed(&small_config(true));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        // a config for another architecture no longer matches the tensors
        let mut other = ck.clone();
        other.config.model.neck_width = 6;
        let mut mixed = Checkpoint::from_bytes(&bytes).unwrap().sections();
        let cfg_pos = mixed.iter().position(|s| s.0 == "config").unwrap();
        mixed[cfg_pos].1 = other.config.to_toml().into_bytes();
        let mut raw = MAGIC.to_vec();
        raw.extend_from_slice(&VERSION.to_le_bytes());
        raw.extend_from_slice(&(mixed.len() as u32).to_le_bytes());
        for (n, p) in &mixed {
            raw.extend_from_slice(&(n.len() as u32).to_le_bytes());
            raw.extend_from_slice(n.as_bytes());
            raw.extend_from_slice(&(p.len() as u64).to_le_bytes());
            raw.extend_from_slice(p);
        }
        assert!(Checkpoint::from_bytes(&raw).is_err());
    }
}

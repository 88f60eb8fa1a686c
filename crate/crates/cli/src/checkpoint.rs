//! Binary checkpoints.
//!
//! Layout (little-endian): `"MRGN"`, version `u32`, task `u32`, iteration
//! `u64`, then named tensors until the trailer. Each tensor is name length
//! `u32`, UTF-8 name, rank `u32`, one `u32` per dimension and the `f64`
//! payload. The trailer is the CRC32 of every preceding byte.

use std::path::Path;

use mergan_core::metrics::{ClassifierConfig, Embedding, Mlp, ProxyClassifier};
use mergan_core::models::{Arch, Group, ModelParams, OutputKind};
use mergan_core::numerics::{Rng, Tensor};
use mergan_core::strategies::{AdamState, TrainerState};
use mergan_core::Scalar;

use crate::error::{CheckpointError, CliError, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"MRGN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Completed tasks.
    pub task: u32,
    /// Completed generator iterations over the run.
    pub iteration: u64,
    pub tensors: Vec<NamedTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn content(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Content(msg.into())
}

impl Checkpoint {
    pub fn new(task: u32, iteration: u64) -> Self {
        Self {
            task,
            iteration,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn push_tensor<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        let data = t.data().iter().map(|x| x.to_f64_lossy()).collect();
        self.push(name, t.shape(), data);
    }

    pub fn get(&self, name: &str) -> std::result::Result<&NamedTensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| content(format!("missing tensor {name:?}")))
    }

    /// Copies tensor `name` into `dst`, which must have the same shape.
    pub fn fill<S: Scalar>(
        &self,
        name: &str,
        dst: &mut Tensor<S>,
    ) -> std::result::Result<(), CheckpointError> {
        let t = self.get(name)?;
        if t.shape != dst.shape() {
            return Err(content(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                t.shape,
                dst.shape()
            )));
        }
        for (d, &s) in dst.data_mut().iter_mut().zip(&t.data) {
            *d = S::lit(s);
        }
        Ok(())
    }

    fn scalar(&self, name: &str) -> std::result::Result<f64, CheckpointError> {
        match self.get(name)?.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(content(format!("tensor {name:?} is not a single value"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.task.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 24 {
            return Err(CheckpointError::Truncated {
                offset: bytes.len(),
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        let mut c = Cursor {
            bytes: body,
            pos: 4,
        };
        let version = c.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        let task = c.u32()?;
        let iteration = c.u64()?;
        let mut tensors = Vec::new();
        while c.pos < body.len() {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| content("tensor name is not UTF-8"))?
                .to_string();
            let rank = c.u32()? as usize;
            let shape = (0..rank)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| content(format!("tensor {name:?} is too large")))?;
            let raw = c.take(
                n.checked_mul(8)
                    .ok_or(CheckpointError::Truncated { offset: c.pos })?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self {
            task,
            iteration,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_bytes(&bytes).map_err(|kind| CliError::Checkpoint {
            path: path.to_path_buf(),
            kind,
        })
    }
}

const ARCH: &str = "meta.arch";

fn encode_arch(a: &Arch) -> Vec<f64> {
    let (h, w) = match a.output {
        OutputKind::Image { height, width } => (height, width),
        OutputKind::Points2D => (0, 0),
    };
    [
        a.latent_dim,
        a.gen_hidden[0],
        a.gen_hidden[1],
        h,
        w,
        a.disc_hidden[0],
        a.disc_hidden[1],
        a.categories,
    ]
    .iter()
    .map(|&v| v as f64)
    .collect()
}

fn decode_arch(v: &[f64]) -> std::result::Result<Arch, CheckpointError> {
    let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
    if u.len() != 8 || u.iter().zip(v).any(|(&a, &b)| a as f64 != b) {
        return Err(content("malformed architecture record"));
    }
    let output = match (u[3], u[4]) {
        (0, 0) => OutputKind::Points2D,
        (height, width) => OutputKind::Image { height, width },
    };
    let arch = Arch {
        latent_dim: u[0],
        gen_hidden: [u[1], u[2]],
        output,
        disc_hidden: [u[5], u[6]],
        categories: u[7],
    };
    if arch.latent_dim == 0
        || arch.categories == 0
        || u[1] * u[2] * u[5] * u[6] == 0
        || arch.sample_dim() == 0
    {
        return Err(content("architecture has an empty layer"));
    }
    Ok(arch)
}

fn adam_names<S: Scalar>() -> [(&'static str, &'static [&'static str]); 2] {
    [
        ("g", ModelParams::<S>::group_names(Group::Generator)),
        ("d", &mergan_core::models::DiscriminatorParams::<S>::NAMES),
    ]
}

/// Parameters, running statistics and both optimizers of a run.
pub fn encode_state<S: Scalar>(state: &TrainerState<S>) -> Checkpoint {
    let mut ck = Checkpoint::new(state.task as u32, state.global_iter);
    ck.push(ARCH, &[8], encode_arch(&state.params.arch));
    for (name, t) in state.params.named() {
        ck.push_tensor(name, t);
    }
    for ((group, names), adam) in adam_names::<S>()
        .into_iter()
        .zip([&state.adam_g, &state.adam_d])
    {
        ck.push(format!("adam.{group}.step"), &[1], vec![adam.t as f64]);
        for (i, name) in names.iter().enumerate() {
            ck.push_tensor(format!("adam.{group}.m.{name}"), &adam.m[i]);
            ck.push_tensor(format!("adam.{group}.v.{name}"), &adam.v[i]);
        }
    }
    ck
}

pub fn decode_params<S: Scalar>(
    ck: &Checkpoint,
) -> std::result::Result<ModelParams<S>, CheckpointError> {
    let arch = decode_arch(&ck.get(ARCH)?.data)?;
    let mut params = ModelParams::init(arch, &mut Rng::new(0));
    for (name, t) in params.named_mut() {
        ck.fill(name, t)?;
    }
    Ok(params)
}

pub fn decode_state<S: Scalar>(
    ck: &Checkpoint,
) -> std::result::Result<TrainerState<S>, CheckpointError> {
    let params = decode_params::<S>(ck)?;
    let mut adams = [
        AdamState::new(params.generator.trainable()),
        AdamState::new(params.discriminator.tensors()),
    ];
    for ((group, names), adam) in adam_names::<S>().into_iter().zip(adams.iter_mut()) {
        let step = ck.scalar(&format!("adam.{group}.step"))?;
        if step < 0.0 || step.fract() != 0.0 {
            return Err(content(format!("invalid optimizer step {step}")));
        }
        adam.t = step as u64;
        for (i, name) in names.iter().enumerate() {
            ck.fill(&format!("adam.{group}.m.{name}"), &mut adam.m[i])?;
            ck.fill(&format!("adam.{group}.v.{name}"), &mut adam.v[i])?;
        }
    }
    let [adam_g, adam_d] = adams;
    Ok(TrainerState {
        params,
        adam_g,
        adam_d,
        task: ck.task as usize,
        global_iter: ck.iteration,
    })
}

/// Proxy classifier weights and its held-out accuracy.
pub fn encode_proxy<S: Scalar>(proxy: &ProxyClassifier<S>) -> Checkpoint {
    let mut ck = Checkpoint::new(0, 0);
    let embedding = match proxy.embedding {
        Embedding::Penultimate => 0.0,
        Embedding::Identity => 1.0,
    };
    ck.push("proxy.embedding", &[1], vec![embedding]);
    ck.push("proxy.test_accuracy", &[1], vec![proxy.test_accuracy]);
    for (i, (w, b)) in proxy.mlp.layers.iter().enumerate() {
        ck.push_tensor(format!("proxy.l{i}.w"), w);
        ck.push_tensor(format!("proxy.l{i}.b"), b);
    }
    ck
}

/// Restores a proxy with the layer sizes of `input`, `cfg.hidden` and `classes`.
pub fn decode_proxy<S: Scalar>(
    ck: &Checkpoint,
    input: usize,
    classes: usize,
    cfg: &ClassifierConfig,
) -> std::result::Result<ProxyClassifier<S>, CheckpointError> {
    let mut mlp = Mlp::init(input, cfg.hidden, classes, &mut Rng::new(0));
    for (i, (w, b)) in mlp.layers.iter_mut().enumerate() {
        ck.fill(&format!("proxy.l{i}.w"), w)?;
        ck.fill(&format!("proxy.l{i}.b"), b)?;
    }
    let embedding = match ck.scalar("proxy.embedding")? {
        e if e == 0.0 => Embedding::Penultimate,
        e if e == 1.0 => Embedding::Identity,
        e => return Err(content(format!("unknown embedding code {e}"))),
    };
    Ok(ProxyClassifier {
        mlp,
        test_accuracy: ck.scalar("proxy.test_accuracy")?,
        embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mergan_core::numerics::Rng;
    use mergan_core::numerics::Stream;
    use proptest::prelude::*;

    fn state(seed: u64, points: bool) -> TrainerState<f64> {
        let arch = Arch {
            latent_dim: 3,
            gen_hidden: [4, 5],
            output: if points {
                OutputKind::Points2D
            } else {
                OutputKind::Image {
                    height: 2,
                    width: 3,
                }
            },
            disc_hidden: [5, 4],
            categories: 3,
        };
        let mut s = TrainerState::new(arch, seed);
        let mut rng = Rng::derive(seed, Stream::Probe, 0);
        for (_, t) in s.params.named_mut() {
            for x in t.data_mut() {
                *x = rng.normal();
            }
        }
        for adam in [&mut s.adam_g, &mut s.adam_d] {
            for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                for x in t.data_mut() {
                    *x = rng.uniform01();
                }
            }
            adam.t = 17;
        }
        s.task = 2;
        s.global_iter = 400;
        s
    }

    #[test]
    fn state_round_trip_is_exact() {
        for points in [false, true] {
            let s = state(3, points);
            let bytes = encode_state(&s).to_bytes();
            let ck = Checkpoint::from_bytes(&bytes).unwrap();
            let back: TrainerState<f64> = decode_state(&ck).unwrap();
            assert_eq!(back, s);
            assert_eq!(encode_state(&back).to_bytes(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::new(3, 1234).to_bytes();
        assert_eq!(&bytes[..4], b"MRGN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1234);
        assert_eq!(bytes.len(), 24);
        let crc = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..20]));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_state(&state(1, false)).to_bytes();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(CheckpointError::Crc { .. })
        ));
        for cut in [3, 10, 23, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(
            Checkpoint::from_bytes(&v2),
            Err(CheckpointError::Version {
                found: 2,
                expected: 1
            })
        );
        assert_eq!(
            Checkpoint::from_bytes(b"PNG...."),
            Err(CheckpointError::BadMagic)
        );
    }

    #[test]
    fn missing_or_misshapen_tensors_are_rejected() {
        let mut ck = encode_state(&state(1, false));
        ck.tensors.retain(|t| t.name != "g.out.b");
        assert!(decode_state::<f64>(&ck).is_err());
        let mut ck = encode_state(&state(1, false));
        ck.tensors[3].shape = vec![1, ck.tensors[3].data.len()];
        assert!(decode_state::<f64>(&ck).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let ck = encode_state(&state(5, false));
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
        let err = Checkpoint::load(&dir.path().join("missing.ckpt")).unwrap_err();
        assert!(err.to_string().contains("missing.ckpt"));
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            task in any::<u32>(),
            iteration in any::<u64>(),
            tensors in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3), any::<u64>()),
                0..5,
            ),
        ) {
            let mut ck = Checkpoint::new(task, iteration);
            for (name, shape, bits) in tensors {
                let n: usize = shape.iter().product();
                let data = (0..n as u64).map(|i| f64::from_bits(bits.wrapping_add(i))).collect();
                ck.push(name, &shape, data);
            }
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}

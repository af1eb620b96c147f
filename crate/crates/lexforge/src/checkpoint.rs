//! Checkpoint file.
//!
//! ```text
//! lexforge-ckpt-v1
//! stage lft
//! step 200
//! seed 7
//! config vocab_size=1200 context_length=128 layers=2 heads=8 embed_dim=64 mlp_hidden_dim=256
//! params_stage lpt
//! lora rank=8 alpha=16 dropout=0 targets=query,value      (or `lora none`)
//! tensor <name> f64 <d0>x<d1> <byte offset>               (one per tensor)
//! payload_bytes <n>
//! end
//! <n bytes of little-endian f64><8-byte little-endian FNV-1a of the payload>
//! ```
//!
//! Base tensors use their model names; adapter factors are stored as
//! `lora.<weight>.a` and `lora.<weight>.b`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use lexforge_core::lora::LoraPair;
use lexforge_core::model::ModelError;
use lexforge_core::{
    Checkpoint, LoraAdapters, LoraConfig, LoraTarget, ModelParameters, Stage, Tensor,
    TransformerConfig,
};
use thiserror::Error;

pub const MAGIC: &str = "lexforge-ckpt-v1";
const MAGIC_FAMILY: &str = "lexforge-ckpt-";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read or write checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown checkpoint format `{0}`")]
    Version(String),
    #[error("checkpoint payload is truncated or corrupt")]
    Checksum,
    #[error("malformed checkpoint manifest: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn lora_text(cfg: &LoraConfig) -> String {
    let targets: Vec<&str> = cfg.targets.iter().map(|t| t.as_str()).collect();
    format!(
        "rank={} alpha={} dropout={} targets={}",
        cfg.rank,
        cfg.alpha,
        cfg.dropout,
        targets.join(",")
    )
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut entries: Vec<(String, &Tensor)> = ckpt
        .params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t))
        .collect();
    if let Some(ad) = &ckpt.adapters {
        for (name, pair) in ad.factors() {
            entries.push((format!("lora.{name}.a"), &pair.a));
            entries.push((format!("lora.{name}.b"), &pair.b));
        }
    }
    let c = ckpt.params.config();
    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}");
    let _ = writeln!(head, "stage {}", ckpt.stage);
    let _ = writeln!(head, "step {}", ckpt.step);
    let _ = writeln!(head, "seed {}", ckpt.seed);
    let _ = writeln!(
        head,
        "config vocab_size={} context_length={} layers={} heads={} embed_dim={} mlp_hidden_dim={}",
        c.vocab_size, c.context_length, c.layers, c.heads, c.embed_dim, c.mlp_hidden_dim
    );
    let _ = writeln!(head, "params_stage {}", ckpt.params.stage());
    match &ckpt.adapters {
        Some(ad) => {
            let _ = writeln!(head, "lora {} stage={}", lora_text(ad.config()), ad.stage());
        }
        None => {
            let _ = writeln!(head, "lora none");
        }
    }
    let mut offset = 0;
    for (name, t) in &entries {
        let _ = writeln!(head, "tensor {name} f64 {} {offset}", shape_text(t.shape()));
        offset += t.len() * 8;
    }
    let _ = writeln!(head, "payload_bytes {offset}");
    let _ = writeln!(head, "end");

    let mut payload = Vec::with_capacity(offset);
    for (_, t) in &entries {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = head.into_bytes();
    let hash = fnv1a(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&hash.to_le_bytes());
    out
}

fn kv(fields: &str) -> impl Iterator<Item = (&str, &str)> {
    fields.split(' ').filter_map(|f| f.split_once('='))
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CheckpointError> {
    s.parse().map_err(|_| bad(format!("bad {what} `{s}`")))
}

fn parse_config(fields: &str) -> Result<TransformerConfig, CheckpointError> {
    let mut m: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, v) in kv(fields) {
        m.insert(k, num(v, k)?);
    }
    let get = |k: &str| m.get(k).copied().ok_or_else(|| bad(format!("config lacks `{k}`")));
    Ok(TransformerConfig {
        vocab_size: get("vocab_size")?,
        context_length: get("context_length")?,
        layers: get("layers")?,
        heads: get("heads")?,
        embed_dim: get("embed_dim")?,
        mlp_hidden_dim: get("mlp_hidden_dim")?,
    })
}

fn parse_lora(fields: &str) -> Result<Option<(LoraConfig, Stage)>, CheckpointError> {
    if fields == "none" {
        return Ok(None);
    }
    let (mut rank, mut alpha, mut dropout, mut targets, mut stage) = (None, None, None, None, None);
    for (k, v) in kv(fields) {
        match k {
            "rank" => rank = Some(num(v, k)?),
            "alpha" => alpha = Some(num(v, k)?),
            "dropout" => dropout = Some(num(v, k)?),
            "stage" => stage = Some(num(v, k)?),
            "targets" => {
                targets = Some(
                    v.split(',')
                        .map(|t| t.parse::<LoraTarget>())
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            other => return Err(bad(format!("unknown lora field `{other}`"))),
        }
    }
    let missing = || bad("incomplete lora line");
    Ok(Some((
        LoraConfig {
            rank: rank.ok_or_else(missing)?,
            alpha: alpha.ok_or_else(missing)?,
            dropout: dropout.ok_or_else(missing)?,
            targets: targets.ok_or_else(missing)?,
        },
        stage.ok_or_else(missing)?,
    )))
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let first_nl = bytes.iter().position(|&b| b == b'\n');
    let magic = std::str::from_utf8(&bytes[..first_nl.unwrap_or(bytes.len())])
        .map_err(|_| CheckpointError::Version("<binary>".into()))?;
    if magic != MAGIC {
        if magic.starts_with(MAGIC_FAMILY) || first_nl.is_some() {
            return Err(CheckpointError::Version(magic.into()));
        }
        // A prefix of the magic line itself is a truncated file.
        return Err(if MAGIC.starts_with(magic) {
            CheckpointError::Checksum
        } else {
            CheckpointError::Version(magic.into())
        });
    }

    // Everything up to and including the `end` line is the manifest. A file
    // cut inside the manifest is reported as truncated.
    let marker = b"\nend\n";
    let head_len = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or(CheckpointError::Checksum)?;
    let head = std::str::from_utf8(&bytes[..head_len]).map_err(|_| bad("manifest is not UTF-8"))?;

    let (mut stage, mut step, mut seed, mut config, mut params_stage, mut lora) =
        (None, None, None, None, None, None);
    let mut entries = Vec::new();
    let mut payload_len = None;
    for line in head.lines().skip(1) {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "stage" => stage = Some(num::<Stage>(rest, "stage")?),
            "step" => step = Some(num::<u64>(rest, "step")?),
            "seed" => seed = Some(num::<u64>(rest, "seed")?),
            "config" => config = Some(parse_config(rest)?),
            "params_stage" => params_stage = Some(num::<Stage>(rest, "stage")?),
            "lora" => lora = Some(parse_lora(rest)?),
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dtype, shape, offset] = parts[..] else {
                    return Err(bad(format!("bad tensor line `{line}`")));
                };
                if dtype != "f64" {
                    return Err(bad(format!("unsupported dtype `{dtype}`")));
                }
                let shape = shape
                    .split('x')
                    .map(|d| num::<usize>(d, "dimension"))
                    .collect::<Result<Vec<_>, _>>()?;
                entries.push(Entry {
                    name: name.to_string(),
                    shape,
                    offset: num(offset, "offset")?,
                });
            }
            "payload_bytes" => payload_len = Some(num::<usize>(rest, "payload size")?),
            "end" => {}
            other => return Err(bad(format!("unknown manifest key `{other}`"))),
        }
    }
    let missing = |k: &str| bad(format!("manifest lacks `{k}`"));
    let payload_len = payload_len.ok_or_else(|| missing("payload_bytes"))?;

    let rest = &bytes[head_len..];
    if rest.len() != payload_len + 8 {
        return Err(CheckpointError::Checksum);
    }
    let (payload, tail) = rest.split_at(payload_len);
    let stored = u64::from_le_bytes(tail.try_into().expect("eight bytes"));
    if stored != fnv1a(payload) {
        return Err(CheckpointError::Checksum);
    }

    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0;
    for e in entries {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.offset + n * 8 > payload_len {
            return Err(bad(format!("tensor `{}` has an inconsistent offset", e.name)));
        }
        let data = payload[e.offset..e.offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        expected_offset += n * 8;
        if tensors.insert(e.name.clone(), Tensor::new(e.shape, data)).is_some() {
            return Err(bad(format!("duplicate tensor `{}`", e.name)));
        }
    }
    if expected_offset != payload_len {
        return Err(bad("payload size does not match the tensor table"));
    }

    let lora_tensors: BTreeMap<String, Tensor> = {
        let names: Vec<String> = tensors.keys().filter(|n| n.starts_with("lora.")).cloned().collect();
        names
            .into_iter()
            .map(|n| {
                let t = tensors.remove(&n).expect("listed");
                (n, t)
            })
            .collect()
    };
    let config = config.ok_or_else(|| missing("config"))?;
    let params = ModelParameters::from_tensors(
        config,
        params_stage.ok_or_else(|| missing("params_stage"))?,
        tensors,
    )?;
    let adapters = match lora.ok_or_else(|| missing("lora"))? {
        None if lora_tensors.is_empty() => None,
        None => return Err(bad("adapter tensors without a lora line")),
        Some((cfg, ad_stage)) => {
            let mut factors: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
            for (name, t) in lora_tensors {
                let inner = &name["lora.".len()..];
                if let Some(w) = inner.strip_suffix(".a") {
                    factors.entry(w.to_string()).or_default().0 = Some(t);
                } else if let Some(w) = inner.strip_suffix(".b") {
                    factors.entry(w.to_string()).or_default().1 = Some(t);
                } else {
                    return Err(bad(format!("bad adapter tensor name `{name}`")));
                }
            }
            let factors = factors
                .into_iter()
                .map(|(w, pair)| match pair {
                    (Some(a), Some(b)) => Ok((w, LoraPair { a, b })),
                    _ => Err(bad(format!("adapter `{w}` lacks a factor"))),
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            let ad = LoraAdapters::from_factors(cfg, ad_stage, factors)?;
            // Shape-checks every factor against its base weight.
            lexforge_core::lora::merge_lora(&params, &ad)?;
            Some(ad)
        }
    };
    Ok(Checkpoint {
        stage: stage.ok_or_else(|| missing("stage"))?,
        params,
        adapters,
        step: step.ok_or_else(|| missing("step"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

//! Checkpoint files: a `CHECKPOINT v1` text header echoing the config,
//! then `(u32 name length, name, u32 rows, u32 cols, f32 data)` records
//! for the parameters, the EMA shadow (`ema.` prefix) and the optimizer
//! moments (`opt.` prefix). All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DanceDenoiser, Ema, LrSchedule, ModelConfig, ModelError, Optimizer, OptimizerKind, Params, TrainState};
use crate::formats::Header;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A training state plus caller-defined header fields (stored as `run.*`).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: TrainState,
    pub extra: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn config_fields(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("layers", cfg.layers.to_string()),
        ("heads", cfg.heads.to_string()),
        ("model_dim", cfg.model_dim.to_string()),
        ("mlp_dim", cfg.mlp_dim.to_string()),
        ("dropout", cfg.dropout.to_string()),
        ("cond_dim", cfg.cond_dim.to_string()),
        ("seq_len", cfg.seq_len.to_string()),
        ("pose_dim", cfg.pose_dim.to_string()),
        ("cond_dropout_prob", cfg.cond_dropout_prob.to_string()),
        ("ema_decay", cfg.ema_decay.to_string()),
    ]
}

fn parse_config(h: &Header) -> Result<ModelConfig, ModelError> {
    fn get<T: std::str::FromStr>(h: &Header, key: &str) -> Result<T, ModelError> {
        let raw = h
            .get(&format!("config.{key}"))
            .ok_or_else(|| ModelError::Checkpoint(format!("missing config.{key}")))?;
        raw.parse().map_err(|_| ModelError::Checkpoint(format!("bad config.{key}: {raw}")))
    }
    let cfg = ModelConfig {
        layers: get(h, "layers")?,
        heads: get(h, "heads")?,
        model_dim: get(h, "model_dim")?,
        mlp_dim: get(h, "mlp_dim")?,
        dropout: get(h, "dropout")?,
        cond_dim: get(h, "cond_dim")?,
        seq_len: get(h, "seq_len")?,
        pose_dim: get(h, "pose_dim")?,
        cond_dropout_prob: get(h, "cond_dropout_prob")?,
        ema_decay: get(h, "ema_decay")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_record(w: &mut impl Write, name: &str, t: &Array2<f64>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.nrows() as u32).to_le_bytes())?;
    w.write_all(&(t.ncols() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ModelError::Checkpoint("truncated record".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_record(r: &mut impl Read) -> Result<(String, Array2<f64>), ModelError> {
    let len = read_u32(r)? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(|_| ModelError::Checkpoint("truncated record name".into()))?;
    let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("record name is not UTF-8".into()))?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut buf = vec![0u8; rows * cols * 4];
    r.read_exact(&mut buf).map_err(|_| ModelError::Checkpoint(format!("truncated tensor {name}")))?;
    let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((name, Array2::from_shape_vec((rows, cols), values).expect("sized buffer")))
}

pub fn save_checkpoint(path: &Path, state: &TrainState, extra: &[(String, String)]) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let cfg = state.model.config();
    let mut h = Header::new("CHECKPOINT");
    h.push("version", CHECKPOINT_VERSION)
        .push("step", state.step)
        .push("optimizer", state.optimizer.kind().as_str())
        .push("lr", state.optimizer.lr())
        .push("optimizer_steps", state.optimizer.steps());
    match state.schedule {
        LrSchedule::Constant(lr) => {
            h.push("lr_schedule", "constant").push("lr_peak", lr);
        }
        LrSchedule::Cosine { peak, floor, warmup, total } => {
            h.push("lr_schedule", "cosine")
                .push("lr_peak", peak)
                .push("lr_floor", floor)
                .push("lr_warmup", warmup)
                .push("lr_total", total);
        }
    }
    for (k, v) in config_fields(cfg) {
        h.push(&format!("config.{k}"), v);
    }
    for (k, v) in extra {
        h.push(&format!("run.{k}"), v);
    }
    let names = state.model.params().names().to_vec();
    let mut records: Vec<(String, &Array2<f64>)> = Vec::new();
    records.extend(names.iter().cloned().zip(state.model.params().tensors()));
    records.extend(names.iter().map(|n| format!("ema.{n}")).zip(state.ema.shadow().tensors()));
    records.extend(state.optimizer.state_tensors(&names));
    h.push("tensors", records.len());

    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    h.write_to(&mut w).map_err(io)?;
    for (name, t) in records {
        write_record(&mut w, &name, t).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let mut r = BufReader::new(fs::File::open(path).map_err(io)?);
    let h = Header::read_from(&mut r, "CHECKPOINT", path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let field = |key: &str| h.get(key).ok_or_else(|| ModelError::Checkpoint(format!("missing header field {key}")));
    let num = |key: &str| -> Result<u64, ModelError> {
        field(key)?.parse().map_err(|_| ModelError::Checkpoint(format!("bad header field {key}")))
    };
    if num("version")? != CHECKPOINT_VERSION as u64 {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", field("version")?)));
    }
    let cfg = parse_config(&h)?;
    let count = num("tensors")? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, t) = read_record(&mut r)?;
        tensors.insert(name, t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }

    let names: Vec<String> = super::params::expected_shapes(&cfg).into_iter().map(|(n, _)| n).collect();
    let take = |prefix: &str| -> Result<Params, ModelError> {
        let ts = names
            .iter()
            .map(|n| {
                tensors
                    .get(&format!("{prefix}{n}"))
                    .cloned()
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {prefix}{n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Params::from_parts(names.clone(), ts))
    };
    let model = DanceDenoiser::from_params(cfg.clone(), take("")?)?;
    let shadow = take("ema.")?;
    model.with_params(shadow.clone())?;
    let kind = OptimizerKind::parse(field("optimizer")?)
        .ok_or_else(|| ModelError::Checkpoint(format!("unknown optimizer {}", field("optimizer").unwrap_or(""))))?;
    let lr: f64 = field("lr")?.parse().map_err(|_| ModelError::Checkpoint("bad lr".into()))?;
    let mut optimizer = Optimizer::new(kind, lr, model.params());
    optimizer.restore(num("optimizer_steps")?, &names, &|k| tensors.get(k).cloned())?;
    let float = |key: &str| -> Result<f64, ModelError> {
        field(key)?.parse().map_err(|_| ModelError::Checkpoint(format!("bad header field {key}")))
    };
    let schedule = match field("lr_schedule")? {
        "constant" => LrSchedule::Constant(float("lr_peak")?),
        "cosine" => LrSchedule::Cosine {
            peak: float("lr_peak")?,
            floor: float("lr_floor")?,
            warmup: num("lr_warmup")?,
            total: num("lr_total")?,
        },
        other => return Err(ModelError::Checkpoint(format!("unknown lr_schedule {other}"))),
    };
    let state =
        TrainState { ema: Ema::from_shadow(cfg.ema_decay, shadow), model, optimizer, schedule, step: num("step")? };
    let extra = h.with_prefix("run.").map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Ok(Checkpoint { state, extra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_schedule;
    use crate::kinematics::{MotionClip, PoseLayout, Skeleton};
    use crate::model::{train_step, LossWeights, TrainingExample};
    use crate::rng::{standard_normal, SeedStream};

    #[test]
    fn round_trip_preserves_state_to_f32_precision() {
        let cfg = ModelConfig { layers: 1, heads: 2, model_dim: 8, mlp_dim: 8, seq_len: 6, ..ModelConfig::desk(2) };
        let model = DanceDenoiser::new(cfg, &mut SeedStream::new(0).rng(0)).unwrap();
        let schedule = LrSchedule::Cosine { peak: 1e-3, floor: 1e-5, warmup: 2, total: 10 };
        let mut state = TrainState::with_schedule(model, OptimizerKind::Adan, schedule);
        let ex = TrainingExample {
            motion: MotionClip::rest(6, 30.0, PoseLayout::smpl()).unwrap().into_data(),
            cond: standard_normal(&mut SeedStream::new(1).rng(0), 6, 2),
        };
        let sched = cosine_schedule(5).unwrap();
        let mut rng = SeedStream::new(2).rng(0);
        for _ in 0..3 {
            train_step(&mut state, std::slice::from_ref(&ex), &Skeleton::smpl(), &sched, &LossWeights::default(), &mut rng).unwrap();
        }
        let dir = std::env::temp_dir().join(format!("motiondiff-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        save_checkpoint(&path, &state, &[("steps".into(), "5".into())]).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state.step, 3);
        assert_eq!(back.state.optimizer.steps(), 3);
        assert_eq!(back.state.schedule, schedule);
        assert_eq!(back.extra("steps"), Some("5"));
        assert_eq!(back.state.model.config(), state.model.config());
        assert!(back.state.model.params().distance(state.model.params()) < 1e-5);
        assert!(back.state.ema.shadow().distance(state.ema.shadow()) < 1e-5);
        // Saving what was loaded reproduces the file exactly.
        let again = dir.join("b.ckpt");
        save_checkpoint(&again, &back.state, &back.extra).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

        let bytes = fs::read(&path).unwrap();
        fs::write(&again, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&again).is_err());
    }
}

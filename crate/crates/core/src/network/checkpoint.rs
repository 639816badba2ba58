use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    layer_sizes: Vec<usize>,
    input_scale: [f64; 3],
    input_offset: [f64; 3],
    seed: u64,
    adam_step: Option<u64>,
    log_re: Option<f64>,
    log_pe: Option<f64>,
}

/// Adam first/second moments and step counter. With trainable equation
/// parameters the vectors carry two extra trailing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerMoments {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// A network plus whatever trainer state was saved alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub moments: Option<OptimizerMoments>,
    /// Trainable (ln Re, ln Pe) in inverse mode.
    pub log_re_pe: Option<(f64, f64)>,
}

impl From<MlpParams> for Checkpoint {
    fn from(params: MlpParams) -> Self {
        Checkpoint { params, moments: None, log_re_pe: None }
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ck.params;
    let header = Header {
        kind: "mlp".into(),
        layer_sizes: p.layer_sizes.clone(),
        input_scale: p.input_scale,
        input_offset: p.input_offset,
        seed: p.seed,
        adam_step: ck.moments.as_ref().map(|m| m.step),
        log_re: ck.log_re_pe.map(|x| x.0),
        log_pe: ck.log_re_pe.map(|x| x.1),
    };
    let mut sections: Vec<(&str, &[f64])> = vec![("params", p.flat())];
    if let Some(m) = &ck.moments {
        sections.push(("adam_m", &m.m));
        sections.push(("adam_v", &m.v));
    }
    io::encode_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &header, &sections)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    io::write_atomic(path, &encode(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut c = io::read_container::<Header>(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    if c.header.kind != "mlp" {
        return Err(Error::Format(format!("unknown checkpoint kind '{}'", c.header.kind)));
    }
    let flat = c.take("params")?;
    let mut params = MlpParams::from_flat(&c.header.layer_sizes, flat)
        .map_err(|e| Error::Format(format!("checkpoint parameters: {e}")))?;
    params.input_scale = c.header.input_scale;
    params.input_offset = c.header.input_offset;
    params.seed = c.header.seed;
    let log_re_pe = match (c.header.log_re, c.header.log_pe) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(Error::Format("only one of log_re/log_pe present".into())),
    };
    // in inverse mode the moments also cover (ln Re, ln Pe), stored last
    let expected = params.n_params() + if log_re_pe.is_some() { 2 } else { 0 };
    let moments = match c.header.adam_step {
        Some(step) => {
            let m = c.take("adam_m")?;
            let v = c.take("adam_v")?;
            if m.len() != expected || v.len() != expected {
                return Err(Error::Format("optimizer moments do not match parameters".into()));
            }
            Some(OptimizerMoments { step, m, v })
        }
        None => None,
    };
    Ok(Checkpoint { params, moments, log_re_pe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::architecture;

    #[test]
    fn round_trip_with_trainer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = MlpParams::init(&architecture(2, 5), 3)
            .unwrap()
            .with_input_box([0.0, -0.5, -0.5], [1.0, 0.5, 0.0])
            .unwrap();
        let n = params.n_params();
        let ck = Checkpoint {
            params,
            moments: Some(OptimizerMoments { step: 12, m: vec![0.5; n + 2], v: vec![0.25; n + 2] }),
            log_re_pe: Some((6.0f64.ln(), 4.0f64.ln())),
        };
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::from(MlpParams::init(&[3, 4], 1).unwrap());
        let mut bytes = encode(&ck).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}

//! Checkpoint format for trained score networks: a single JSON header line
//! followed by the flat parameter block as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::noise::NoiseSchedule;
use crate::seeds;
use crate::{Error, Result};

use super::{NetArch, Network, ScoreKind, ScoreModel};

const MAGIC: &str = "dcsr-score";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    arch: NetArch,
    output_dim: usize,
    cond_resolution: Option<usize>,
    sigma_max_base: f64,
    param_count: usize,
}

/// Persist a trained network model. Analytic score kinds have no parameters
/// to store and are rejected.
pub fn save_checkpoint(model: &ScoreModel, path: &Path) -> Result<()> {
    let net = match model.kind() {
        ScoreKind::Network(net) | ScoreKind::ConditionalNetwork(net) => net,
        _ => return Err(Error::invalid("only network models can be checkpointed")),
    };
    let params = net.flatten_params();
    let header = Header {
        magic: MAGIC.to_string(),
        version: VERSION,
        arch: net.arch().clone(),
        output_dim: net.output_dim(),
        cond_resolution: net.cond_resolution(),
        sigma_max_base: model.sched().sigma_max_base(),
        param_count: params.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in &params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a model saved by [`save_checkpoint`], restoring parameters exactly.
pub fn load_checkpoint(path: &Path) -> Result<ScoreModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::invalid("truncated checkpoint header"))?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.magic != MAGIC {
        return Err(Error::invalid("not a score checkpoint"));
    }
    if header.version != VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut block = Vec::new();
    r.read_to_end(&mut block)?;
    if block.len() != header.param_count * 8 {
        return Err(Error::invalid(format!(
            "checkpoint block has {} bytes, expected {}",
            block.len(),
            header.param_count * 8
        )));
    }
    let params: Vec<f64> = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut rng = seeds::stream(0, &[]);
    let mut net = Network::new(
        header.arch,
        header.output_dim,
        header.cond_resolution,
        &mut rng,
    )?;
    net.set_params(&params)?;
    let sched = NoiseSchedule::new(header.sigma_max_base)?;
    Ok(ScoreModel::from_network(net, sched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dataset, Field, ProvenanceTag};
    use crate::score::{train_uncond, TrainConfig};

    #[test]
    fn round_trip_preserves_parameters_and_outputs() {
        let data = Dataset::new(
            (0..6)
                .map(|i| Field::constant(0.3 * i as f64, 8).unwrap())
                .collect(),
            ProvenanceTag::new("hf", "none", 0),
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            max_iter: 50,
            seed: 21,
            ..TrainConfig::default()
        };
        let (model, _) = train_uncond(&data, &cfg, &NetArch::tiny(), NoiseSchedule::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let (ScoreKind::Network(a), ScoreKind::Network(b)) = (model.kind(), loaded.kind()) else {
            panic!("expected networks");
        };
        let pa = a.flatten_params();
        let pb = b.flatten_params();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        let x = Field::constant(0.5, 8).unwrap();
        let s1 = model.eval(&x, 0.4, None).unwrap();
        let s2 = loaded.eval(&x, 0.4, None).unwrap();
        assert_eq!(s1.values(), s2.values());
    }

    #[test]
    fn rejects_analytic_models() {
        let m = ScoreModel::point_mass(
            Field::constant(0.0, 4).unwrap(),
            NoiseSchedule::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(&m, &dir.path().join("x.ckpt")).is_err());
    }
}

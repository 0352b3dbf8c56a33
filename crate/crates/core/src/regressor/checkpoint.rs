use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encoder_spec, head_spec, QmrNet, RegressorConfig};
use crate::error::{Error, Result};
use crate::modifiers::ParamGrid;
use crate::nn::{Checkpoint, Model};

pub const REGRESSOR_FORMAT: &str = "qmrkit-regressor";

/// Provenance of a trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epoch the weights come from; 0 for an untrained network.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: RegressorConfig,
    training: TrainingMeta,
}

/// Writes encoders then heads, plus the configuration and training metadata.
pub fn save_model(model: &QmrNet, path: impl AsRef<Path>) -> Result<()> {
    let models = model
        .encoders
        .iter()
        .chain(&model.heads)
        .map(Model::state)
        .collect();
    Checkpoint::new(
        REGRESSOR_FORMAT,
        models,
        Meta {
            config: model.config.clone(),
            training: model.meta,
        },
    )
    .write(path)
}

/// Loads a regressor; with `expected` set, its grids must match exactly.
pub fn load_model(path: impl AsRef<Path>, expected: Option<&[ParamGrid]>) -> Result<QmrNet> {
    let ck: Checkpoint<Meta> = Checkpoint::read(path, REGRESSOR_FORMAT)?;
    let Meta { config, training } = ck.meta;
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("stored configuration: {e}")))?;
    if let Some(exp) = expected {
        if exp != config.grids.as_slice() {
            let ids = |g: &[ParamGrid]| g.iter().map(|g| g.identity()).collect::<Vec<_>>().join(",");
            return Err(Error::GridMismatch {
                expected: ids(exp),
                found: ids(&config.grids),
            });
        }
    }
    let ne = config.encoder_count();
    if ck.models.len() != ne + config.grids.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} models stored, configuration needs {}",
            ck.models.len(),
            ne + config.grids.len()
        )));
    }
    let mut encoders = Vec::with_capacity(ne);
    let mut heads = Vec::with_capacity(config.grids.len());
    for (i, state) in ck.models.into_iter().enumerate() {
        let want = if i < ne {
            encoder_spec(config.channels, state.spec.seed)
        } else {
            head_spec(config.channels[2], config.grids[i - ne].n(), state.spec.seed)
        };
        if want != state.spec {
            return Err(Error::CorruptCheckpoint(format!(
                "model {i} layers do not match the stored configuration"
            )));
        }
        let m = Model::from_state(state)?;
        if i < ne {
            encoders.push(m);
        } else {
            heads.push(m);
        }
    }
    Ok(QmrNet {
        config,
        encoders,
        heads,
        meta: training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modifiers::ModifierKind;
    use crate::regressor::{predict, Topology};
    use crate::synth::textured_image;

    #[test]
    fn round_trip_and_guards() {
        let config = RegressorConfig {
            grids: vec![ModifierKind::Blur.default_grid(), ModifierKind::Snr.default_grid()],
            topology: Topology::MultiBranch,
            channels: [2, 3, 4],
            side: 16,
            ..RegressorConfig::default()
        };
        let net = QmrNet::new(config.clone(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&net, &p).unwrap();
        let back = load_model(&p, Some(&config.grids)).unwrap();
        let img = textured_image(30, 30, 2);
        assert_eq!(predict(&net, &img, 4, 1).unwrap(), predict(&back, &img, 4, 1).unwrap());
        assert_eq!(back.meta(), net.meta());

        let other = [ModifierKind::Blur.default_grid()];
        assert!(matches!(load_model(&p, Some(&other)), Err(Error::GridMismatch { .. })));

        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&p, None), Err(Error::CorruptCheckpoint(_))));
    }
}

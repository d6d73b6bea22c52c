//! Parameter checkpoints.
//!
//! A checkpoint is a JSON object with a shape header and one entry per
//! layer:
//!
//! ```json
//! {"format": "ppcpt-qnetwork", "version": 1, "activation": "tanh",
//!  "shapes": [[32, 2], [4, 32]],
//!  "layers": [{"weights": [...], "biases": [...]}, ...]}
//! ```
//!
//! `shapes[i]` is `[outputs, inputs]` and `weights` is row-major. Floats
//! are written in shortest round-trip form, so loading restores every
//! parameter bit for bit.

use std::fs;
use std::path::Path;

use ppcpt_core::{Activation, Layer, QNetwork};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const FORMAT: &str = "ppcpt-qnetwork";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerData {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    activation: Activation,
    shapes: Vec<[usize; 2]>,
    layers: Vec<LayerData>,
}

pub fn to_json(net: &QNetwork) -> String {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: VERSION,
        activation: net.activation(),
        shapes: net.layers().iter().map(|l| [l.outputs, l.inputs]).collect(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerData { weights: l.weights.clone(), biases: l.biases.clone() })
            .collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
}

pub fn from_json(text: &str, path: &Path) -> Result<QNetwork> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| HarnessError::parse(path, &e))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(HarnessError::config(
            path,
            format!("expected format {FORMAT} version {VERSION}, found {} version {}", file.format, file.version),
        ));
    }
    if file.shapes.len() != file.layers.len() {
        return Err(HarnessError::config(
            path,
            format!("{} shapes for {} layers", file.shapes.len(), file.layers.len()),
        ));
    }
    let layers = file
        .shapes
        .iter()
        .zip(file.layers)
        .map(|(&[outputs, inputs], data)| Layer { inputs, outputs, weights: data.weights, biases: data.biases })
        .collect();
    QNetwork::from_layers(layers, file.activation).map_err(|e| HarnessError::config(path, e.to_string()))
}

pub fn save(net: &QNetwork, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<QNetwork> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = QNetwork::random(&[2, 7, 3, 4], Activation::Relu, &mut rng).unwrap();
        let mut params = net.parameters();
        params[0] = 1.0 / 3.0;
        params[1] = f64::MIN_POSITIVE;
        params[2] = -5e-324;
        params[3] = 1e300;
        net.set_parameters(&params).unwrap();
        let back = from_json(&to_json(&net), Path::new("c.json")).unwrap();
        let bits = |n: &QNetwork| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back.activation(), net.activation());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = QNetwork::zeros(&[2, 3], Activation::Tanh).unwrap();
        let text = to_json(&net).replace("[[3,2]]", "[[2,3]]");
        assert!(matches!(from_json(&text, Path::new("c.json")), Err(HarnessError::Config { .. })));
    }
}

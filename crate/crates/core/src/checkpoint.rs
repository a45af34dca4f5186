//! JSON checkpoints: `{config, params: {name: {shape, data}}}` where `data` is
//! base64 of the little-endian 64-bit floats, so round trips are bit-exact.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredParam {
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: BTreeMap<String, StoredParam>,
}

pub fn encode_matrix(m: &Matrix) -> StoredParam {
    let bytes: Vec<u8> = m.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    StoredParam { shape: [m.rows(), m.cols()], data: STANDARD.encode(bytes) }
}

pub fn decode_matrix(name: &str, p: &StoredParam) -> Result<Matrix> {
    let bytes = STANDARD.decode(&p.data).map_err(|e| Error::Checkpoint(format!("{name}: invalid base64: {e}")))?;
    let [rows, cols] = p.shape;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Checkpoint(format!("{name}: {} bytes for shape {rows}x{cols}", bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
}

impl Checkpoint {
    pub fn capture(config: &impl Serialize, store: &ParamStore) -> Result<Self> {
        let params = store.iter().map(|p| (p.name.clone(), encode_matrix(&p.value))).collect();
        Ok(Self { config: serde_json::to_value(config)?, params })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("config: {e}")))
    }

    /// Overwrites every parameter of `store` from the checkpoint. Names and
    /// shapes must match exactly.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in store.iter_mut() {
            let stored =
                self.params.get(&p.name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            let value = decode_matrix(&p.name, stored)?;
            if value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} does not match model {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Classifier, TiedEncoder, TiedEncoderConfig, ToyNet, ToyNetConfig};

    #[test]
    fn toynet_round_trip_is_bit_exact() {
        let cfg = ToyNetConfig { use_projector: true, ..Default::default() };
        let net = ToyNet::new(&cfg, 9).unwrap();
        let text = Checkpoint::capture(&cfg, net.params()).unwrap().to_json().unwrap();
        let ck = Checkpoint::from_json(&text).unwrap();
        let back_cfg: ToyNetConfig = ck.config().unwrap();
        assert_eq!(back_cfg, cfg);
        let mut other = ToyNet::new(&back_cfg, 1234).unwrap();
        ck.restore(other.params_mut()).unwrap();
        for (a, b) in net.params().iter().zip(other.params().iter()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
        }
    }

    #[test]
    fn special_values_survive() {
        let m = Matrix::from_rows(&[&[-0.0, f64::MIN_POSITIVE, 1e308, 1.0 / 3.0]]);
        let back = decode_matrix("m", &encode_matrix(&m)).unwrap();
        assert_eq!(back.data()[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, m);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let enc_cfg = TiedEncoderConfig::default();
        let enc = TiedEncoder::new(&enc_cfg, 0).unwrap();
        let ck = Checkpoint::capture(&enc_cfg, enc.params()).unwrap();
        let mut net = ToyNet::new(&ToyNetConfig::default(), 0).unwrap();
        assert!(matches!(ck.restore(net.params_mut()), Err(Error::Checkpoint(_))));
        let mut bad = encode_matrix(&Matrix::zeros(2, 2));
        bad.shape = [3, 3];
        assert!(decode_matrix("x", &bad).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}

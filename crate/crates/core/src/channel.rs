//! Deterministic serial-channel model with fault injection.
//!
//! Every link of the system (RFID air gap, opto-decoupled serial, radio)
//! is a seedable byte pipe. Faults are applied in a fixed order — drop,
//! duplicate, per-bit flips, freeze substitution, babble — so two runs with
//! equal seeds and input sequences produce byte-identical delivery logs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unsolicited traffic injected on a period (a babbling idiot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Babble {
    /// Raw frame injected on the channel.
    #[serde(with = "hex_bytes")]
    pub frame: Vec<u8>,
    /// Injected every `period` cycles.
    pub period: u64,
}

pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Configurable corruption behavior of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    #[serde(default)]
    pub bit_flip_probability: f64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub duplicate_probability: f64,
    /// Re-deliver the last frame and suppress new ones, from the first
    /// delivery onward.
    #[serde(default)]
    pub freeze: bool,
    #[serde(default)]
    pub babble: Option<Babble>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel {
            bit_flip_probability: 0.0,
            drop_probability: 0.0,
            duplicate_probability: 0.0,
            freeze: false,
            babble: None,
            seed: 0,
        }
    }
}

impl FaultModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("bit_flip_probability", self.bit_flip_probability),
            ("drop_probability", self.drop_probability),
            ("duplicate_probability", self.duplicate_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if let Some(babble) = &self.babble {
            if babble.period == 0 {
                return Err("babble.period must be nonzero".into());
            }
            if babble.frame.is_empty() {
                return Err("babble.frame must be non-empty".into());
            }
        }
        Ok(())
    }
}

/// How one delivery attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Delivered,
    Dropped,
    Duplicated,
    Frozen,
    Babble,
}

/// One line of the delivery log. Every attempt is recorded, drops included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryRecord {
    pub cycle: u64,
    pub bytes: usize,
    pub disposition: Disposition,
    /// Hamming distance between input and delivered frame (0 unless flips hit).
    pub flipped_bits: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("channel {0:?}: nothing delivered yet, cannot freeze")]
    NothingToFreeze(String),
}

/// A deterministic, seedable byte pipe.
pub struct SerialChannel {
    pub name: String,
    model: FaultModel,
    rng: ChaCha8Rng,
    last_delivered: Option<Vec<u8>>,
    frozen_from: Option<u64>,
    log: Vec<DeliveryRecord>,
}

impl SerialChannel {
    pub fn new(name: impl Into<String>, model: FaultModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        SerialChannel {
            name: name.into(),
            model,
            rng,
            last_delivered: None,
            frozen_from: None,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn take_new_log(&mut self, from: usize) -> &[DeliveryRecord] {
        &self.log[from..]
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    /// Freezes the channel from `from_cycle` onward: every later transmit
    /// re-delivers the last pre-freeze frame regardless of input.
    pub fn freeze_from(&mut self, from_cycle: u64) -> Result<(), ChannelError> {
        if self.last_delivered.is_none() {
            return Err(ChannelError::NothingToFreeze(self.name.clone()));
        }
        self.frozen_from = Some(from_cycle);
        Ok(())
    }

    fn frozen_at(&self, cycle: u64) -> bool {
        match self.frozen_from {
            Some(from) if cycle >= from => true,
            _ => self.model.freeze && self.last_delivered.is_some(),
        }
    }

    /// Pushes one frame through the channel at `cycle`. Returns 0, 1 or 2
    /// delivered frames (plus babble frames on their period). Faults are
    /// outcomes, not errors.
    pub fn transmit(&mut self, frame: &[u8], cycle: u64) -> Vec<Vec<u8>> {
        assert!(!frame.is_empty(), "frames must be non-empty");
        let mut outputs = Vec::new();

        if self.frozen_at(cycle) {
            let frozen = self.last_delivered.clone().expect("frozen implies a prior delivery");
            self.log.push(DeliveryRecord {
                cycle,
                bytes: frozen.len(),
                disposition: Disposition::Frozen,
                flipped_bits: 0,
            });
            outputs.push(frozen);
        } else if self.rng.gen_bool(self.model.drop_probability) {
            self.log.push(DeliveryRecord {
                cycle,
                bytes: frame.len(),
                disposition: Disposition::Dropped,
                flipped_bits: 0,
            });
        } else {
            let copies = if self.rng.gen_bool(self.model.duplicate_probability) {
                2
            } else {
                1
            };
            for copy in 0..copies {
                let (delivered, flipped) = self.apply_flips(frame);
                self.log.push(DeliveryRecord {
                    cycle,
                    bytes: delivered.len(),
                    disposition: if copy == 0 {
                        Disposition::Delivered
                    } else {
                        Disposition::Duplicated
                    },
                    flipped_bits: flipped,
                });
                self.last_delivered = Some(delivered.clone());
                outputs.push(delivered);
            }
        }

        if let Some(babble) = &self.model.babble {
            if cycle.is_multiple_of(babble.period) {
                self.log.push(DeliveryRecord {
                    cycle,
                    bytes: babble.frame.len(),
                    disposition: Disposition::Babble,
                    flipped_bits: 0,
                });
                outputs.push(babble.frame.clone());
            }
        }

        outputs
    }

    fn apply_flips(&mut self, frame: &[u8]) -> (Vec<u8>, u32) {
        let mut out = frame.to_vec();
        let mut flipped = 0;
        if self.model.bit_flip_probability > 0.0 {
            for byte in &mut out {
                for bit in 0..8 {
                    if self.rng.gen_bool(self.model.bit_flip_probability) {
                        *byte ^= 1 << bit;
                        flipped += 1;
                    }
                }
            }
        }
        (out, flipped)
    }
}

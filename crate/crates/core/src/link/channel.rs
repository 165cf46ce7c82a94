//! Parametric stand-in for the WiFi-to-ZigBee physical layer.
//!
//! Bit error rate follows a coherent OQPSK-style curve,
//! `ber = floor + (1 - 2 floor) Q(sqrt(2 snr))`, and a packet whose header
//! would be hit by any error is dropped whole:
//! `P(loss) = 1 - (1 - ber)^header_bits`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

use super::packet::{PacketBatch, PAYLOAD_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Delivers everything untouched.
    Identity,
    /// Independent payload bit flips, no packet loss.
    AwgnBsc,
    /// Whole-packet loss from header corruption, payloads untouched.
    Erasure,
    /// Packet loss followed by bit flips in the packets that survive.
    Composite,
}

impl ChannelKind {
    fn drops_packets(self) -> bool {
        matches!(self, Self::Erasure | Self::Composite)
    }

    fn flips_bits(self) -> bool {
        matches!(self, Self::AwgnBsc | Self::Composite)
    }
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub snr_db: f64,
    #[serde(default)]
    pub ber_floor: f64,
    #[serde(default = "default_header_bits")]
    pub header_bits: u32,
    #[serde(default)]
    pub seed: u64,
    /// `(snr_db, ber)` pairs replacing the analytic curve; linearly
    /// interpolated, held constant beyond the ends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_override: Option<Vec<(f64, f64)>>,
}

fn default_header_bits() -> u32 {
    48
}

impl ChannelModel {
    pub fn new(kind: ChannelKind, snr_db: f64, seed: u64) -> Self {
        Self {
            kind,
            snr_db,
            ber_floor: 0.0,
            header_bits: default_header_bits(),
            seed,
            ber_override: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(ChannelKind::Identity, f64::INFINITY, 0)
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        Self {
            snr_db,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() {
            return Err(contract("snr_db must be a number"));
        }
        if !(0.0..0.5).contains(&self.ber_floor) {
            return Err(contract(format!(
                "ber_floor must lie in [0, 0.5), got {}",
                self.ber_floor
            )));
        }
        if self.header_bits == 0 {
            return Err(contract("header_bits must be positive"));
        }
        if let Some(table) = &self.ber_override {
            if table.is_empty() {
                return Err(contract("ber_override table is empty"));
            }
            if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(contract("ber_override SNRs must be strictly increasing"));
            }
            if table
                .iter()
                .any(|&(s, b)| !s.is_finite() || !(0.0..=0.5).contains(&b))
            {
                return Err(contract(
                    "ber_override entries need finite SNR and BER in [0, 0.5]",
                ));
            }
        }
        Ok(())
    }

    /// Bit error probability at the configured SNR.
    pub fn ber(&self) -> f64 {
        if self.kind == ChannelKind::Identity {
            return 0.0;
        }
        if let Some(table) = &self.ber_override {
            return interpolate(table, self.snr_db);
        }
        let snr = 10f64.powf(self.snr_db / 10.0);
        self.ber_floor + (1.0 - 2.0 * self.ber_floor) * q_function((2.0 * snr).sqrt())
    }

    pub fn packet_loss_probability(&self) -> f64 {
        if !self.kind.drops_packets() {
            return 0.0;
        }
        1.0 - (1.0 - self.ber()).powi(self.header_bits as i32)
    }

    /// A stateful realization with its own random stream.
    pub fn realize(&self) -> Result<Channel> {
        self.validate()?;
        Ok(Channel {
            kind: self.kind,
            ber: self.ber(),
            loss: self.packet_loss_probability(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            stats: ChannelStats::default(),
        })
    }
}

fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = table.partition_point(|&(s, _)| s <= x);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Running counters of what a channel did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub packets_sent: u64,
    pub packets_lost: u64,
    /// Payload bits inside delivered packets.
    pub bits_delivered: u64,
    pub bits_flipped: u64,
}

impl ChannelStats {
    /// Observed flip rate over delivered payload bits, if any arrived.
    pub fn empirical_ber(&self) -> Option<f64> {
        (self.bits_delivered > 0).then(|| self.bits_flipped as f64 / self.bits_delivered as f64)
    }

    pub fn loss_fraction(&self) -> f64 {
        if self.packets_sent == 0 {
            0.0
        } else {
            self.packets_lost as f64 / self.packets_sent as f64
        }
    }

    pub fn merge(&mut self, other: &ChannelStats) {
        self.packets_sent += other.packets_sent;
        self.packets_lost += other.packets_lost;
        self.bits_delivered += other.bits_delivered;
        self.bits_flipped += other.bits_flipped;
    }
}

#[derive(Clone, Debug)]
pub struct Channel {
    kind: ChannelKind,
    ber: f64,
    loss: f64,
    rng: ChaCha8Rng,
    stats: ChannelStats,
}

impl Channel {
    pub fn ber(&self) -> f64 {
        self.ber
    }

    pub fn loss_probability(&self) -> f64 {
        self.loss
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    /// Drops and corrupts packets in place, returning this batch's counters.
    pub fn transmit(&mut self, batch: &mut PacketBatch) -> ChannelStats {
        let mut s = ChannelStats::default();
        for packet in &mut batch.packets {
            s.packets_sent += 1;
            if !packet.delivered {
                s.packets_lost += 1;
                continue;
            }
            if self.kind.drops_packets() && self.loss > 0.0 && self.rng.gen::<f64>() < self.loss {
                packet.delivered = false;
                s.packets_lost += 1;
                continue;
            }
            s.bits_delivered += PAYLOAD_BITS as u64;
            if self.kind.flips_bits() && self.ber > 0.0 {
                for i in 0..PAYLOAD_BITS {
                    if self.rng.gen::<f64>() < self.ber {
                        packet.flip(i);
                        s.bits_flipped += 1;
                    }
                }
            }
        }
        self.stats.merge(&s);
        s
    }
}

/// One-shot transmission through a fresh realization of `model`.
pub fn apply_channel(
    batch: &PacketBatch,
    model: &ChannelModel,
) -> Result<(PacketBatch, ChannelStats)> {
    let mut out = batch.clone();
    let stats = model.realize()?.transmit(&mut out);
    Ok((out, stats))
}

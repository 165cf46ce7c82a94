//! Cross-technology transport of codebook indices in fixed-size packets
//! over a simulated channel.

mod bits;
mod channel;
mod packet;
mod webee;

pub use bits::{bits_per_index, bits_to_indices, indices_to_bits, BitStream};
pub use channel::{apply_channel, q_function, Channel, ChannelKind, ChannelModel, ChannelStats};
pub use packet::{
    depacketize, packetize, Framing, Packet, PacketBatch, Reassembled, OFFSET_BITS, PAYLOAD_BITS,
    PAYLOAD_BYTES,
};
pub use webee::{
    webee_baseline_roundtrip, webee_framing, webee_packets_per_image, webee_transmit, WebeeOutcome,
    LOST_PIXEL, PIXEL_BITS,
};

use crate::codec::IndexChannel;
use crate::error::{contract, Result};
use crate::semantic_kb::IndexGrid;

/// A transmit/receive coding pair shared by both ends of the link.
pub trait CtcAlgorithm: Send + Sync {
    fn name(&self) -> &'static str;

    /// Index grid to bitstream.
    fn tx(&self, grid: &IndexGrid, k: usize) -> Result<BitStream>;

    /// Bitstream back to indices for a `rows × cols` grid.
    fn rx(&self, bits: &BitStream, k: usize, rows: usize, cols: usize) -> Result<IndexGrid>;

    /// Width of one index on the wire.
    fn item_bits(&self, k: usize) -> Result<usize>;
}

/// Fixed-width big-endian fields in raster order.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedWidth;

impl CtcAlgorithm for FixedWidth {
    fn name(&self) -> &'static str {
        "fixed_width"
    }

    fn tx(&self, grid: &IndexGrid, k: usize) -> Result<BitStream> {
        indices_to_bits(grid, k)
    }

    fn rx(&self, bits: &BitStream, k: usize, rows: usize, cols: usize) -> Result<IndexGrid> {
        bits_to_indices(bits, k, rows, cols)
    }

    fn item_bits(&self, k: usize) -> Result<usize> {
        bits_per_index(k)
    }
}

/// Names accepted by [`algorithm`].
pub const ALGORITHMS: &[&str] = &["fixed_width"];

pub fn algorithm(name: &str) -> Result<Box<dyn CtcAlgorithm>> {
    match name {
        "fixed_width" => Ok(Box::new(FixedWidth)),
        other => Err(contract(format!(
            "unknown CTC algorithm {other:?}; known: {}",
            ALGORITHMS.join(", ")
        ))),
    }
}

/// Per-grid transport accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transmission {
    pub packets: usize,
    pub packets_lost: usize,
    pub erased_slots: usize,
    pub wire_bits: usize,
}

/// Indices over the simulated link: code, frame, corrupt, reassemble, decode.
pub struct CtcLink {
    algorithm: Box<dyn CtcAlgorithm>,
    channel: Channel,
    last: Transmission,
}

impl CtcLink {
    pub fn new(algorithm: Box<dyn CtcAlgorithm>, model: &ChannelModel) -> Result<Self> {
        Ok(Self {
            algorithm,
            channel: model.realize()?,
            last: Transmission::default(),
        })
    }

    pub fn fixed_width(model: &ChannelModel) -> Result<Self> {
        Self::new(Box::new(FixedWidth), model)
    }

    pub fn algorithm(&self) -> &dyn CtcAlgorithm {
        self.algorithm.as_ref()
    }

    /// Cumulative channel counters.
    pub fn stats(&self) -> ChannelStats {
        self.channel.stats()
    }

    pub fn last_transmission(&self) -> Transmission {
        self.last
    }

    pub fn framing(&self, k: usize) -> Result<Framing> {
        Framing::dense(self.algorithm.item_bits(k)?)
    }
}

impl IndexChannel for CtcLink {
    fn carry(&mut self, sent: &IndexGrid, codebook_size: usize) -> Result<IndexGrid> {
        let bits = self.algorithm.tx(sent, codebook_size)?;
        let framing = self.framing(codebook_size)?;
        let mut batch = packetize(&bits, framing)?;
        self.channel.transmit(&mut batch);
        let r = depacketize(&batch, sent.slots())?;
        let decoded = self
            .algorithm
            .rx(&r.bits, codebook_size, sent.rows(), sent.cols())?;
        self.last = Transmission {
            packets: batch.packets.len(),
            packets_lost: r.lost_packets + r.rejected_packets,
            erased_slots: r.erased_count(),
            wire_bits: batch.wire_bits(),
        };
        IndexGrid::with_erasures(
            sent.rows(),
            sent.cols(),
            decoded.indices().to_vec(),
            r.erased,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize) -> IndexGrid {
        IndexGrid::new(
            side,
            side,
            (0..side * side).map(|i| (i * 131 % 512) as u32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn registry_round_trips_every_algorithm() {
        for name in ALGORITHMS {
            let a = algorithm(name).unwrap();
            assert_eq!(a.name(), *name);
            let g = grid(8);
            assert_eq!(a.rx(&a.tx(&g, 512).unwrap(), 512, 8, 8).unwrap(), g);
        }
        assert!(algorithm("gray").is_err());
    }

    #[test]
    fn lossless_link_is_transparent() {
        let mut link = CtcLink::fixed_width(&ChannelModel::identity()).unwrap();
        let g = grid(7);
        assert_eq!(link.carry(&g, 512).unwrap(), g);
        let t = link.last_transmission();
        assert_eq!(
            (t.packets, t.packets_lost, t.erased_slots, t.wire_bits),
            (3, 0, 0, 600)
        );
    }

    #[test]
    fn erasures_follow_lost_packets() {
        let model = ChannelModel::new(ChannelKind::Erasure, 3.0, 9);
        let mut link = CtcLink::fixed_width(&model).unwrap();
        let g = grid(8);
        let mut seen_loss = false;
        for _ in 0..50 {
            let out = link.carry(&g, 512).unwrap();
            let t = link.last_transmission();
            assert_eq!(out.erased_count(), t.erased_slots);
            // packets 0..2 hold 20 slots, the last holds 4
            assert!(t.erased_slots <= 64);
            for s in 0..64 {
                if !out.erased()[s] {
                    assert_eq!(out.indices()[s], g.indices()[s]);
                }
            }
            seen_loss |= t.packets_lost > 0;
        }
        assert!(seen_loss);
    }
}

//! Fixed-size framing. Every packet payload is 25 bytes: a 16-bit
//! big-endian offset of its first item, then up to `items_per_packet`
//! fixed-width items, then zero padding.

use crate::error::{contract, Result};

use super::BitStream;

pub const PAYLOAD_BYTES: usize = 25;
pub const PAYLOAD_BITS: usize = PAYLOAD_BYTES * 8;
pub const OFFSET_BITS: usize = 16;

/// Item width and packing density of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    item_bits: usize,
    items_per_packet: usize,
}

impl Framing {
    pub fn new(item_bits: usize, items_per_packet: usize) -> Result<Self> {
        if item_bits == 0 || items_per_packet == 0 {
            return Err(contract("framing needs positive item width and count"));
        }
        if items_per_packet * item_bits + OFFSET_BITS > PAYLOAD_BITS {
            return Err(contract(format!(
                "{items_per_packet} items of {item_bits} bits do not fit a {PAYLOAD_BITS}-bit payload"
            )));
        }
        Ok(Self {
            item_bits,
            items_per_packet,
        })
    }

    /// As many items as fit after the offset field.
    pub fn dense(item_bits: usize) -> Result<Self> {
        Self::new(item_bits, (PAYLOAD_BITS - OFFSET_BITS) / item_bits.max(1))
    }

    pub fn item_bits(&self) -> usize {
        self.item_bits
    }

    pub fn items_per_packet(&self) -> usize {
        self.items_per_packet
    }

    pub fn packet_count(&self, items: usize) -> usize {
        items.div_ceil(self.items_per_packet)
    }

    /// Bits on the wire for `items` items.
    pub fn wire_bits(&self, items: usize) -> usize {
        self.packet_count(items) * PAYLOAD_BITS
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    /// Offset the sender wrote; the receiver re-reads it from the payload.
    pub seq_offset: u16,
    pub payload: [u8; PAYLOAD_BYTES],
    pub delivered: bool,
}

impl Packet {
    pub fn bit(&self, i: usize) -> bool {
        (self.payload[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.payload[i / 8] ^= 1 << (7 - i % 8);
    }

    fn set(&mut self, i: usize, bit: bool) {
        if bit {
            self.payload[i / 8] |= 1 << (7 - i % 8);
        }
    }

    fn field(&self, at: usize, width: usize) -> u64 {
        (at..at + width).fold(0u64, |acc, i| (acc << 1) | self.bit(i) as u64)
    }

    /// The offset as it arrived.
    pub fn received_offset(&self) -> usize {
        self.field(0, OFFSET_BITS) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketBatch {
    pub framing: Framing,
    pub total_items: usize,
    pub packets: Vec<Packet>,
}

impl PacketBatch {
    pub fn wire_bits(&self) -> usize {
        self.packets.len() * PAYLOAD_BITS
    }

    pub fn lost(&self) -> usize {
        self.packets.iter().filter(|p| !p.delivered).count()
    }
}

/// Splits a stream of `item_bits`-wide items into packets.
pub fn packetize(bits: &BitStream, framing: Framing) -> Result<PacketBatch> {
    let w = framing.item_bits;
    if !bits.len().is_multiple_of(w) {
        return Err(contract(format!(
            "{} bits is not a whole number of {w}-bit items",
            bits.len()
        )));
    }
    let total_items = bits.len() / w;
    if total_items == 0 {
        return Err(contract("nothing to packetize"));
    }
    if (framing.packet_count(total_items) - 1) * framing.items_per_packet >= 1 << OFFSET_BITS {
        return Err(contract(format!(
            "{total_items} items exceed the 16-bit offset range"
        )));
    }
    let packets = (0..framing.packet_count(total_items))
        .map(|p| {
            let first = p * framing.items_per_packet;
            let count = framing.items_per_packet.min(total_items - first);
            let mut packet = Packet {
                seq_offset: first as u16,
                payload: [0; PAYLOAD_BYTES],
                delivered: true,
            };
            for i in 0..OFFSET_BITS {
                packet.set(i, (first >> (OFFSET_BITS - 1 - i)) & 1 == 1);
            }
            for (j, &b) in bits.bits()[first * w..(first + count) * w]
                .iter()
                .enumerate()
            {
                packet.set(OFFSET_BITS + j, b);
            }
            packet
        })
        .collect();
    Ok(PacketBatch {
        framing,
        total_items,
        packets,
    })
}

/// Reassembly result: item bits (zero where erased) and per-item erasure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reassembled {
    pub bits: BitStream,
    pub erased: Vec<bool>,
    /// Packets the channel dropped.
    pub lost_packets: usize,
    /// Delivered packets discarded because their offset arrived out of range.
    pub rejected_packets: usize,
}

impl Reassembled {
    pub fn erased_count(&self) -> usize {
        self.erased.iter().filter(|&&e| e).count()
    }
}

/// Places every delivered packet's items at the offset read from its
/// payload. Items no delivered packet covers stay erased.
pub fn depacketize(batch: &PacketBatch, total_items: usize) -> Result<Reassembled> {
    let w = batch.framing.item_bits;
    let per = batch.framing.items_per_packet;
    if total_items == 0 {
        return Err(contract("total_items must be positive"));
    }
    let mut bits = BitStream::zeros(total_items * w);
    let mut erased = vec![true; total_items];
    let (mut lost_packets, mut rejected_packets) = (0, 0);
    for packet in &batch.packets {
        if !packet.delivered {
            lost_packets += 1;
            continue;
        }
        let first = packet.received_offset();
        if first >= total_items {
            rejected_packets += 1;
            continue;
        }
        let count = per.min(total_items - first);
        let out = bits.bits_mut();
        for j in 0..count * w {
            out[first * w + j] = packet.bit(OFFSET_BITS + j);
        }
        erased[first..first + count]
            .iter_mut()
            .for_each(|e| *e = false);
    }
    Ok(Reassembled {
        bits,
        erased,
        lost_packets,
        rejected_packets,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn stream(items: usize, w: usize) -> BitStream {
        let mut b = BitStream::new();
        for i in 0..items {
            b.push_field((i * 37 + 11) as u64 % (1 << w), w);
        }
        b
    }

    #[test]
    fn dense_framing_sizes() {
        assert_eq!(Framing::dense(9).unwrap().items_per_packet(), 20);
        assert_eq!(Framing::dense(8).unwrap().items_per_packet(), 23);
        assert!(Framing::new(9, 21).is_err());
    }

    #[test]
    fn packet_counts() {
        let f = Framing::dense(9).unwrap();
        assert_eq!(f.packet_count(64), 4);
        assert_eq!(f.packet_count(49), 3);
        let px = Framing::dense(8).unwrap();
        assert_eq!(px.packet_count(3072), 134);
        assert_eq!(px.packet_count(784), 35);
    }

    #[test]
    fn last_packet_is_padded() {
        let f = Framing::dense(9).unwrap();
        let batch = packetize(&stream(64, 9), f).unwrap();
        assert_eq!(batch.packets.len(), 4);
        let last = &batch.packets[3];
        assert_eq!(last.received_offset(), 60);
        // 16 + 4*9 = 52 bits used, rest zero
        assert!((52..PAYLOAD_BITS).all(|i| !last.bit(i)));
        assert_eq!(batch.wire_bits(), 800);
    }

    #[test]
    fn dropping_second_packet_erases_slots_20_to_39() {
        let f = Framing::dense(9).unwrap();
        let bits = stream(64, 9);
        let mut batch = packetize(&bits, f).unwrap();
        batch.packets[1].delivered = false;
        let r = depacketize(&batch, 64).unwrap();
        let erased: Vec<usize> = (0..64).filter(|&i| r.erased[i]).collect();
        assert_eq!(erased, (20..40).collect::<Vec<_>>());
        assert_eq!(r.lost_packets, 1);
        for i in (0..20).chain(40..64) {
            assert_eq!(r.bits.read_field(i * 9, 9), bits.read_field(i * 9, 9));
        }
    }

    #[test]
    fn corrupted_offset_out_of_range_loses_the_packet() {
        let f = Framing::dense(9).unwrap();
        let mut batch = packetize(&stream(49, 9), f).unwrap();
        batch.packets[0].flip(0); // offset becomes 32768
        let r = depacketize(&batch, 49).unwrap();
        assert_eq!(r.rejected_packets, 1);
        assert_eq!(r.erased_count(), 20);
    }

    #[test]
    fn rejects_ragged_streams() {
        let f = Framing::dense(9).unwrap();
        assert!(packetize(&BitStream::zeros(10), f).is_err());
        assert!(packetize(&BitStream::new(), f).is_err());
    }

    proptest! {
        #[test]
        fn erasures_match_lost_packet_slots(items in 1usize..300, mask in prop::collection::vec(any::<bool>(), 15)) {
            let f = Framing::dense(9).unwrap();
            let bits = stream(items, 9);
            let mut batch = packetize(&bits, f).unwrap();
            let mut expected = 0;
            for (p, packet) in batch.packets.iter_mut().enumerate() {
                if mask[p % mask.len()] {
                    packet.delivered = false;
                    expected += 20.min(items - p * 20);
                }
            }
            let r = depacketize(&batch, items).unwrap();
            prop_assert_eq!(r.erased_count(), expected);
            prop_assert_eq!(batch.wire_bits(), f.packet_count(items) * PAYLOAD_BITS);
        }

        #[test]
        fn lossless_reassembly_is_identity(items in 1usize..500, w in 1usize..=12) {
            let f = Framing::dense(w).unwrap();
            let bits = stream(items, w);
            let r = depacketize(&packetize(&bits, f).unwrap(), items).unwrap();
            prop_assert_eq!(r.erased_count(), 0);
            prop_assert_eq!(r.bits, bits);
        }
    }
}

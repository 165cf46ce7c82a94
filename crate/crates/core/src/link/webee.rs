//! Raw-pixel baseline: 8-bit pixels in raster order, 23 per packet.

use crate::error::Result;
use crate::image::Image;

use super::channel::{Channel, ChannelModel, ChannelStats};
use super::packet::{depacketize, packetize, Framing};
use super::BitStream;

pub const PIXEL_BITS: usize = 8;
/// Value given to pixels whose packet never arrived.
pub const LOST_PIXEL: f32 = 0.5;

pub fn webee_framing() -> Framing {
    Framing::dense(PIXEL_BITS).expect("8-bit items always fit")
}

pub fn webee_packets_per_image(samples: usize) -> usize {
    webee_framing().packet_count(samples)
}

/// What happened to one image on the baseline link.
#[derive(Clone, Debug)]
pub struct WebeeOutcome {
    pub image: Image,
    pub packets: usize,
    pub packets_lost: usize,
    pub lost_pixels: usize,
    pub stats: ChannelStats,
}

/// Sends `image` through `channel` as raw 8-bit samples and reassembles it.
pub fn webee_transmit(image: &Image, channel: &mut Channel) -> Result<WebeeOutcome> {
    let bytes = image.to_bytes();
    let mut bits = BitStream::with_capacity(bytes.len() * PIXEL_BITS);
    for &b in &bytes {
        bits.push_field(b as u64, PIXEL_BITS);
    }
    let mut batch = packetize(&bits, webee_framing())?;
    let stats = channel.transmit(&mut batch);
    let r = depacketize(&batch, bytes.len())?;
    let data = (0..bytes.len())
        .map(|i| {
            if r.erased[i] {
                LOST_PIXEL
            } else {
                r.bits.read_field(i * PIXEL_BITS, PIXEL_BITS) as f32 / 255.0
            }
        })
        .collect();
    let (h, w, c) = image.shape();
    Ok(WebeeOutcome {
        image: Image::new(h, w, c, data)?,
        packets: batch.packets.len(),
        packets_lost: r.lost_packets + r.rejected_packets,
        lost_pixels: r.erased_count(),
        stats,
    })
}

/// One-shot baseline round trip through a fresh channel realization.
pub fn webee_baseline_roundtrip(image: &Image, model: &ChannelModel) -> Result<Image> {
    Ok(webee_transmit(image, &mut model.realize()?)?.image)
}

//! Encoder and decoder sides of the codec.

use crate::error::{Error, Result};
use crate::format::{model_checksum, MeasurementPacket};
use crate::image::{central_crop_window, GrayImage};
use crate::network::{self, ModelParams};

/// Central crop `(top, left, height, width)` the model can process.
pub fn crop_for_model(model: &ModelParams, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
    let multiple = model.spatial_multiple(model.phase);
    central_crop_window(height, width, multiple).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{width}x{height} image is smaller than the {multiple}-pixel block grid of this model"
        ))
    })
}

pub fn compress(model: &ModelParams, img: &GrayImage) -> Result<MeasurementPacket> {
    compress_with_checksum(model, img, model_checksum(model))
}

/// As [`compress`] with a precomputed model checksum.
pub fn compress_with_checksum(model: &ModelParams, img: &GrayImage, checksum: u32) -> Result<MeasurementPacket> {
    let (top, left, ch, cw) = crop_for_model(model, img.height, img.width)?;
    let cropped = img.crop(top, left, ch, cw)?;
    let data = network::sample(&cropped.to_tensor(), model)?;
    Ok(MeasurementPacket {
        height: img.height,
        width: img.width,
        crop_top: top,
        crop_left: left,
        crop_height: ch,
        crop_width: cw,
        block_size: model.sampling.block_size,
        measurements: model.sampling.measurements,
        model_checksum: checksum,
        data,
    })
}

/// Reconstructs the cropped image at the model's phase. A packet encoded
/// by a different model is refused unless `ignore_model_checksum` is set.
pub fn decompress(model: &ModelParams, packet: &MeasurementPacket, ignore_model_checksum: bool) -> Result<GrayImage> {
    if !ignore_model_checksum {
        let ours = model_checksum(model);
        if ours != packet.model_checksum {
            return Err(Error::ModelMismatch {
                packet: packet.model_checksum,
                model: ours,
            });
        }
    }
    if packet.block_size != model.sampling.block_size || packet.measurements != model.sampling.measurements {
        return Err(Error::InvalidArgument(format!(
            "packet uses block size {} with {} measurements; model uses {} with {}",
            packet.block_size, packet.measurements, model.sampling.block_size, model.sampling.measurements
        )));
    }
    let multiple = model.spatial_multiple(model.phase);
    if !packet.crop_height.is_multiple_of(multiple) || !packet.crop_width.is_multiple_of(multiple) {
        return Err(Error::InvalidArgument(format!(
            "packet dims {}x{} are not multiples of {multiple} required by this model",
            packet.crop_width, packet.crop_height
        )));
    }
    let recon = network::reconstruct(&packet.data, model, model.phase)?;
    GrayImage::from_tensor(&recon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, NetConfig, SamplingConfig};

    #[test]
    fn full_rate_round_trip_with_crop() {
        let model = ModelParams::full_rate_identity(2, NetConfig::default()).unwrap();
        let img = GrayImage::new(10, 7, (0..70).map(|i| (i * 29 % 256) as u8).collect()).unwrap();
        let packet = compress(&model, &img).unwrap();
        assert_eq!(
            (packet.crop_top, packet.crop_left, packet.crop_height, packet.crop_width),
            (1, 1, 4, 8)
        );
        assert_eq!(packet.payload_len(), 16 * 2);
        let out = decompress(&model, &packet, false).unwrap();
        assert_eq!(out, img.crop(1, 1, 4, 8).unwrap());
    }

    #[test]
    fn foreign_packet_is_refused() {
        let a = init_params(SamplingConfig::new(2, 0.5).unwrap(), NetConfig::default(), 1).unwrap();
        let mut b = a.clone();
        b.seed = 2;
        let img = GrayImage::filled(8, 8, 9);
        let packet = compress(&a, &img).unwrap();
        assert!(matches!(
            decompress(&b, &packet, false),
            Err(Error::ModelMismatch { .. })
        ));
        assert!(decompress(&b, &packet, true).is_ok());
    }
}

//! Synthetic test footage and the raw planar frame format.
//!
//! Planar format: frames back to back, no header. Each RGB frame is the
//! full R plane, then G, then B (`width * height` bytes each); a gray
//! frame is a single plane. Dimensions travel with the [`VideoSpec`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::VisionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub bright_rgb: [u8; 3],
    /// Color on odd phases; equal to `bright_rgb` for a static blob.
    pub dim_rgb: [u8; 3],
    /// Frames per half-cycle of the flicker.
    #[serde(default = "one")]
    pub half_period: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background_rgb: [u8; 3],
    #[serde(default)]
    pub blobs: Vec<BlobSpec>,
}

impl VideoSpec {
    /// Warm blob alternating bright/dim every frame on a dark scene.
    pub fn flickering_fire(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
            background_rgb: [12, 10, 14],
            blobs: vec![BlobSpec {
                x: width / 3,
                y: height / 3,
                width: (width / 8).max(6),
                height: (height / 6).max(6),
                bright_rgb: [255, 200, 80],
                dim_rgb: [200, 120, 40],
                half_period: 1,
            }],
        }
    }

    /// Same blob, never changing (a street light).
    pub fn static_light(width: usize, height: usize, frames: usize) -> Self {
        let mut spec = Self::flickering_fire(width, height, frames);
        spec.blobs[0].dim_rgb = spec.blobs[0].bright_rgb;
        spec
    }

    /// Flickering but blue-white (fails the color gate).
    pub fn flickering_blue(width: usize, height: usize, frames: usize) -> Self {
        let mut spec = Self::flickering_fire(width, height, frames);
        spec.blobs[0].bright_rgb = [120, 210, 255];
        spec.blobs[0].dim_rgb = [60, 140, 230];
        spec
    }

    pub fn constant(width: usize, height: usize, frames: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            frames,
            background_rgb: rgb,
            blobs: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, VisionError> {
        toml::from_str(text).map_err(|e| VisionError::Config(e.to_string()))
    }

    pub fn render(&self, index: usize) -> Frame {
        let mut f = Frame::rgb(self.width, self.height, self.background_rgb);
        for b in &self.blobs {
            let phase = (index / b.half_period.max(1)) % 2;
            let color = if phase == 0 { b.bright_rgb } else { b.dim_rgb };
            f.fill_rect(b.x, b.y, b.width, b.height, &color);
        }
        f
    }

    pub fn render_all(&self) -> Vec<Frame> {
        (0..self.frames).map(|i| self.render(i)).collect()
    }
}

pub fn write_planar<W: Write>(frames: &[Frame], mut out: W) -> std::io::Result<()> {
    for f in frames {
        for ch in 0..f.channels {
            let plane: Vec<u8> = f.data.iter().skip(ch).step_by(f.channels).copied().collect();
            out.write_all(&plane)?;
        }
    }
    Ok(())
}

pub fn read_planar<R: Read>(
    mut input: R,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<Vec<Frame>, VisionError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| VisionError::Config(e.to_string()))?;
    let plane = width * height;
    let frame_len = plane * channels;
    if frame_len == 0 || bytes.len() % frame_len != 0 {
        return Err(VisionError::BufferSize {
            expected: frame_len,
            got: bytes.len(),
        });
    }
    bytes
        .chunks_exact(frame_len)
        .map(|chunk| {
            let mut data = vec![0u8; frame_len];
            for ch in 0..channels {
                for (i, v) in chunk[ch * plane..(ch + 1) * plane].iter().enumerate() {
                    data[i * channels + ch] = *v;
                }
            }
            Frame::new(width, height, channels, data)
        })
        .collect()
}

/// Daylight camera view with a gray smoke column in each listed cell.
pub fn render_smoke_scene(
    width: usize,
    height: usize,
    grid: super::frame::GridSpec,
    smoke_cells: &[(usize, usize)],
    frame_index: usize,
) -> Frame {
    let mut f = Frame::rgb(width, height, [96, 128, 80]);
    // Sky over the top half.
    f.fill_rect(0, 0, width, height / 2, &[150, 185, 220]);
    for &(row, col) in smoke_cells {
        let x0 = col * width / grid.cols;
        let x1 = (col + 1) * width / grid.cols;
        let y0 = row * height / grid.rows;
        let y1 = (row + 1) * height / grid.rows;
        let cw = x1 - x0;
        let drift = (frame_index % 8) * cw / 32;
        f.fill_rect(x0 + cw / 4 + drift, y0, cw / 3, y1 - y0, &[170, 170, 170]);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_round_trip() {
        let frames = VideoSpec::flickering_fire(16, 12, 3).render_all();
        let mut buf = Vec::new();
        write_planar(&frames, &mut buf).unwrap();
        assert_eq!(buf.len(), 3 * 16 * 12 * 3);
        // First plane of frame 0 is all red samples.
        assert_eq!(buf[0], 12);
        assert_eq!(read_planar(buf.as_slice(), 16, 12, 3).unwrap(), frames);
    }

    #[test]
    fn zero_frames_write_nothing() {
        let mut buf = Vec::new();
        write_planar(&VideoSpec::flickering_fire(16, 12, 0).render_all(), &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(read_planar(buf.as_slice(), 16, 12, 3).unwrap().is_empty());
    }

    #[test]
    fn spec_parses() {
        let spec = VideoSpec::from_toml_str(
            "width = 64\nheight = 48\nframes = 4\nbackground_rgb = [0, 0, 0]\n\n[[blobs]]\nx = 1\ny = 1\nwidth = 8\nheight = 8\nbright_rgb = [255, 200, 80]\ndim_rgb = [200, 120, 40]\n",
        )
        .unwrap();
        assert_eq!(spec.blobs[0].half_period, 1);
        assert_ne!(spec.render(0), spec.render(1));
        assert_eq!(spec.render(0), spec.render(2));
    }
}

use serde::{Deserialize, Serialize};

use super::VisionError;

pub const MODEL_INPUT_SIDE: usize = 240;

/// 8-bit image, row-major, channels interleaved (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, VisionError> {
        if channels != 1 && channels != 3 {
            return Err(VisionError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(VisionError::BufferSize {
                expected: width * height * channels,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Self {
        let channels = pixel.len();
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: pixel.repeat(width * height),
        }
    }

    pub fn gray(width: usize, height: usize, value: u8) -> Self {
        Self::filled(width, height, &[value])
    }

    pub fn rgb(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self::filled(width, height, &rgb)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, pixel: &[u8]) {
        assert_eq!(pixel.len(), self.channels);
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.pixel_mut(x, y).copy_from_slice(pixel);
            }
        }
    }

    /// Luma, `0.299 R + 0.587 G + 0.114 B`, rounded.
    pub fn to_gray(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Frame {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Frame {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    pub fn center_crop_square(&self) -> Frame {
        let side = self.width.min(self.height);
        self.crop((self.width - side) / 2, (self.height - side) / 2, side, side)
    }

    /// Bilinear resample with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, out_w: usize, out_h: usize) -> Frame {
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        let c = self.channels;
        let axis = |o: usize, scale: f64, len: usize| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, pos - lo as f64)
        };
        let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, self.width)).collect();
        let mut data = Vec::with_capacity(out_w * out_h * c);
        for y in 0..out_h {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for &(x0, x1, fx) in &cols {
                for ch in 0..c {
                    let at = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * c + ch] as f64;
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame {
            width: out_w,
            height: out_h,
            channels: c,
            data,
        }
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Model input preparation: grayscale, centered 1:1 crop, 240x240 bilinear.
pub fn preprocess(frame: &Frame) -> Result<Frame, VisionError> {
    if frame.width < MODEL_INPUT_SIDE || frame.height < MODEL_INPUT_SIDE {
        return Err(VisionError::TooSmall {
            width: frame.width,
            height: frame.height,
            min: MODEL_INPUT_SIDE,
        });
    }
    Ok(frame
        .to_gray()
        .center_crop_square()
        .resize_bilinear(MODEL_INPUT_SIDE, MODEL_INPUT_SIDE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cols: 8, rows: 4 }
    }
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.cols * self.rows
    }

    /// Cell boundaries along one axis: `floor(i * len / n)`.
    fn edges(len: usize, n: usize) -> Vec<usize> {
        (0..=n).map(|i| i * len / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub x0: usize,
    pub y0: usize,
    pub frame: Frame,
}

/// Row-major cells tiling the frame; sizes differ by at most one pixel.
pub fn split_grid(frame: &Frame, grid: GridSpec) -> Result<Vec<GridCell>, VisionError> {
    if grid.cols == 0 || grid.rows == 0 || frame.width < grid.cols || frame.height < grid.rows {
        return Err(VisionError::GridTooFine {
            width: frame.width,
            height: frame.height,
            grid,
        });
    }
    let xs = GridSpec::edges(frame.width, grid.cols);
    let ys = GridSpec::edges(frame.height, grid.rows);
    let mut cells = Vec::with_capacity(grid.cell_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            cells.push(GridCell {
                row,
                col,
                x0: xs[col],
                y0: ys[row],
                frame: frame.crop(xs[col], ys[row], xs[col + 1] - xs[col], ys[row + 1] - ys[row]),
            });
        }
    }
    Ok(cells)
}

/// Inverse of [`split_grid`].
pub fn reassemble(cells: &[GridCell], width: usize, height: usize) -> Result<Frame, VisionError> {
    let channels = cells.first().map(|c| c.frame.channels).ok_or(VisionError::EmptyWindow)?;
    let mut out = Frame {
        width,
        height,
        channels,
        data: vec![0; width * height * channels],
    };
    for cell in cells {
        let f = &cell.frame;
        if f.channels != channels || cell.x0 + f.width > width || cell.y0 + f.height > height {
            return Err(VisionError::MixedSizes);
        }
        for y in 0..f.height {
            let src = y * f.width * channels;
            let dst = ((cell.y0 + y) * width + cell.x0) * channels;
            out.data[dst..dst + f.width * channels].copy_from_slice(&f.data[src..src + f.width * channels]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_gray_survives_preprocess() {
        let out = preprocess(&Frame::rgb(640, 480, [90, 90, 90])).unwrap();
        assert_eq!((out.width, out.height, out.channels), (240, 240, 1));
        assert!(out.data.iter().all(|&v| v == 90));
    }

    #[test]
    fn pure_red_luma() {
        let out = preprocess(&Frame::rgb(300, 300, [255, 0, 0])).unwrap();
        assert!(out.data.iter().all(|&v| v == 76));
    }

    #[test]
    fn full_hd_crop_geometry() {
        // Mark columns 419 and 420: only the second is inside the centered 1080 crop.
        let mut f = Frame::gray(1920, 1080, 0);
        f.fill_rect(419, 0, 1, 1080, &[200]);
        f.fill_rect(420, 0, 1, 1080, &[100]);
        let sq = f.center_crop_square();
        assert_eq!((sq.width, sq.height), (1080, 1080));
        assert_eq!(sq.pixel(0, 500), &[100]);
        assert_eq!(sq.pixel(1, 500), &[0]);
        let out = preprocess(&f).unwrap();
        assert_eq!((out.width, out.height), (240, 240));
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(
            preprocess(&Frame::gray(239, 500, 0)),
            Err(VisionError::TooSmall { .. })
        ));
    }

    #[test]
    fn full_hd_grid() {
        let mut f = Frame::rgb(1920, 1080, [0, 0, 0]);
        for (i, b) in f.data.iter_mut().enumerate() {
            *b = (i % 251) as u8;
        }
        let cells = split_grid(&f, GridSpec::default()).unwrap();
        assert_eq!(cells.len(), 32);
        assert!(cells.iter().all(|c| c.frame.width == 240 && c.frame.height == 270));
        assert_eq!((cells[9].row, cells[9].col, cells[9].x0, cells[9].y0), (1, 1, 240, 270));
        assert_eq!(reassemble(&cells, 1920, 1080).unwrap(), f);
    }

    #[test]
    fn degenerate_grid() {
        let f = Frame::gray(8, 4, 3);
        let cells = split_grid(&f, GridSpec::default()).unwrap();
        assert_eq!(cells.len(), 32);
        assert!(cells.iter().all(|c| c.frame.width == 1 && c.frame.height == 1));
        assert!(split_grid(&Frame::gray(7, 4, 0), GridSpec::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_partitions_frame(w in 8usize..90, h in 4usize..60, seed in any::<u8>()) {
            let mut f = Frame::gray(w, h, 0);
            for (i, b) in f.data.iter_mut().enumerate() {
                *b = (i as u8).wrapping_mul(31).wrapping_add(seed);
            }
            let cells = split_grid(&f, GridSpec::default()).unwrap();
            let mut cover = vec![0u8; w * h];
            for c in &cells {
                for y in c.y0..c.y0 + c.frame.height {
                    for x in c.x0..c.x0 + c.frame.width { cover[y * w + x] += 1; }
                }
            }
            prop_assert!(cover.iter().all(|&n| n == 1));
            let widths: Vec<usize> = cells.iter().map(|c| c.frame.width).collect();
            let heights: Vec<usize> = cells.iter().map(|c| c.frame.height).collect();
            prop_assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
            prop_assert!(heights.iter().max().unwrap() - heights.iter().min().unwrap() <= 1);
            prop_assert_eq!(reassemble(&cells, w, h).unwrap(), f);
        }

        #[test]
        fn preprocess_is_idempotent(data in proptest::collection::vec(any::<u8>(), 240 * 240)) {
            let f = Frame::new(240, 240, 1, data).unwrap();
            let once = preprocess(&f).unwrap();
            prop_assert_eq!(&once, &f);
            prop_assert_eq!(preprocess(&once).unwrap(), once);
        }
    }
}

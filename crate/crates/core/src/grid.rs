//! Dense row-major image buffers shared by the cue loaders and the
//! rasterizer.

/// H×W×C grid stored row-major: element `(x, y, c)` lives at
/// `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Grid2 { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Grid2 { width, height, channels, data })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: T) {
        let i = self.idx(x, y, c);
        self.data[i] = value;
    }

    pub fn same_shape<U>(&self, other: &Grid2<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Binary image: values are 0 or 1.
pub type Mask = Grid2<u8>;

impl Mask {
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn complement(&self) -> Mask {
        let data = self.data.iter().map(|&v| if v == 0 { 1 } else { 0 }).collect();
        Grid2 { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Pixels set in `self` but not in `other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        assert!(self.same_shape(other), "mask shapes differ");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if a != 0 && b == 0 { 1 } else { 0 })
            .collect();
        Grid2 { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// The mask as a float field (1.0 foreground, 0.0 background).
    pub fn to_field(&self) -> Grid2<f64> {
        let data = self.data.iter().map(|&v| if v != 0 { 1.0 } else { 0.0 }).collect();
        Grid2 { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Morphological erosion with a `(2r+1)²` square structuring element.
    pub fn eroded(&self, r: usize) -> Mask {
        let mut out = Grid2::filled(self.width, self.height, 1, 0u8);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y, 0) == 0 {
                    continue;
                }
                let mut keep = x >= r && y >= r && x + r < self.width && y + r < self.height;
                'scan: for yy in y.saturating_sub(r)..=(y + r).min(self.height - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(self.width - 1) {
                        if !keep {
                            break 'scan;
                        }
                        if self.get(xx, yy, 0) == 0 {
                            keep = false;
                        }
                    }
                }
                if keep {
                    out.set(x, y, 0, 1);
                }
            }
        }
        out
    }

    /// Morphological dilation with a `(2r+1)²` square structuring element.
    pub fn dilated(&self, r: usize) -> Mask {
        let mut out = Grid2::filled(self.width, self.height, 1, 0u8);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y, 0) == 0 {
                    continue;
                }
                for yy in y.saturating_sub(r)..=(y + r).min(self.height - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(self.width - 1) {
                        out.set(xx, yy, 0, 1);
                    }
                }
            }
        }
        out
    }
}

/// Bilinear sample of one channel at continuous pixel coordinates, together
/// with the spatial gradient `(d/dx, d/dy)`. Coordinates are in the
/// convention where sample points sit at pixel centers `(ix + 0.5, iy + 0.5)`;
/// queries outside the image clamp to the border.
pub fn bilinear_sample_with_gradient(grid: &Grid2<f32>, x: f64, y: f64, c: usize) -> (f64, f64, f64) {
    let gx = x - 0.5;
    let gy = y - 0.5;
    let max_x = (grid.width - 1) as f64;
    let max_y = (grid.height - 1) as f64;
    let cx = gx.clamp(0.0, max_x);
    let cy = gy.clamp(0.0, max_y);
    let x0 = (cx.floor() as usize).min(grid.width.saturating_sub(2));
    let y0 = (cy.floor() as usize).min(grid.height.saturating_sub(2));
    let (x0, x1, fx) = if grid.width == 1 { (0, 0, 0.0) } else { (x0, x0 + 1, cx - x0 as f64) };
    let (y0, y1, fy) = if grid.height == 1 { (0, 0, 0.0) } else { (y0, y0 + 1, cy - y0 as f64) };
    let v00 = grid.get(x0, y0, c) as f64;
    let v10 = grid.get(x1, y0, c) as f64;
    let v01 = grid.get(x0, y1, c) as f64;
    let v11 = grid.get(x1, y1, c) as f64;
    let v0 = v00 * (1.0 - fx) + v10 * fx;
    let v1 = v01 * (1.0 - fx) + v11 * fx;
    let value = v0 * (1.0 - fy) + v1 * fy;
    // Clamped coordinates have zero gradient outside the image.
    let dx = if gx > 0.0 && gx < max_x { (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy } else { 0.0 };
    let dy = if gy > 0.0 && gy < max_y { v1 - v0 } else { 0.0 };
    (value, dx, dy)
}

pub fn bilinear_sample(grid: &Grid2<f32>, x: f64, y: f64, c: usize) -> f64 {
    bilinear_sample_with_gradient(grid, x, y, c).0
}

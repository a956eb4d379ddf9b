//! Binary interaction masks over the 64x64 egocentric raster.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Side length of the egocentric raster.
pub const RASTER: usize = 64;

/// A set of raster cells, stored one `u64` per row (bit `x` of row `y` is cell `(x, y)`).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    rows: [u64; RASTER],
}

impl Mask {
    pub fn empty() -> Self {
        Mask { rows: [0; RASTER] }
    }

    /// Axis-aligned box covering `x0..x1` by `y0..y1`, clipped to the raster.
    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let mut m = Mask::empty();
        let cx0 = x0.clamp(0, RASTER as i64) as usize;
        let cx1 = x1.clamp(0, RASTER as i64) as usize;
        let cy0 = y0.clamp(0, RASTER as i64) as usize;
        let cy1 = y1.clamp(0, RASTER as i64) as usize;
        if cx0 >= cx1 || cy0 >= cy1 {
            return m;
        }
        let width = cx1 - cx0;
        let bits = if width == 64 { u64::MAX } else { ((1u64 << width) - 1) << cx0 };
        for row in &mut m.rows[cy0..cy1] {
            *row = bits;
        }
        m
    }

    pub fn from_cells<I: IntoIterator<Item = (usize, usize)>>(cells: I) -> Self {
        let mut m = Mask::empty();
        for (x, y) in cells {
            m.set(x, y);
        }
        m
    }

    pub fn set(&mut self, x: usize, y: usize) {
        assert!(x < RASTER && y < RASTER, "cell ({x}, {y}) outside raster");
        self.rows[y] |= 1 << x;
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < RASTER && y < RASTER && self.rows[y] & (1 << x) != 0
    }

    pub fn area(&self) -> u32 {
        self.rows.iter().map(|r| r.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    pub fn intersection_area(&self, other: &Mask) -> u32 {
        self.rows.iter().zip(&other.rows).map(|(a, b)| (a & b).count_ones()).sum()
    }

    pub fn union_area(&self, other: &Mask) -> u32 {
        self.rows.iter().zip(&other.rows).map(|(a, b)| (a | b).count_ones()).sum()
    }

    /// Mean cell coordinate, or the raster center for an empty mask.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (y, &row) in self.rows.iter().enumerate() {
            let mut bits = row;
            while bits != 0 {
                let x = bits.trailing_zeros() as f64;
                sx += x;
                sy += y as f64;
                n += 1.0;
                bits &= bits - 1;
            }
        }
        if n == 0.0 {
            let c = (RASTER as f64 - 1.0) / 2.0;
            (c, c)
        } else {
            (sx / n, sy / n)
        }
    }

    /// Inclusive-exclusive bounding box `[x0, y0, x1, y1]`, `None` when empty.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let ys: Vec<usize> = (0..RASTER).filter(|&y| self.rows[y] != 0).collect();
        let (&y0, &y1) = (ys.first()?, ys.last()?);
        let any = ys.iter().fold(0u64, |acc, &y| acc | self.rows[y]);
        let x0 = any.trailing_zeros() as usize;
        let x1 = 64 - any.leading_zeros() as usize;
        Some([x0, y0, x1, y1 + 1])
    }
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.bbox() {
            Some(b) => write!(f, "Mask(area={}, bbox={:?})", self.area(), b),
            None => write!(f, "Mask(empty)"),
        }
    }
}

/// Intersection over union of two masks; 0 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let union = a.union_area(b);
    if union == 0 {
        return 0.0;
    }
    a.intersection_area(b) as f64 / union as f64
}

// Serialized as the list of nonzero rows: [[row, bits], ...].
impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<(usize, u64)> =
            self.rows.iter().enumerate().filter(|(_, &r)| r != 0).map(|(y, &r)| (y, r)).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<(usize, u64)> = Vec::deserialize(d)?;
        let mut m = Mask::empty();
        for (y, bits) in rows {
            if y >= RASTER {
                return Err(D::Error::custom(format!("mask row {y} outside raster")));
            }
            m.rows[y] = bits;
        }
        Ok(m)
    }
}

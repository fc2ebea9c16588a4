//! Square QAM alphabets with Gray labelling and unit average energy.

use crate::{Error, Result, C64};

/// A `K`-ary square QAM alphabet.
///
/// Points are stored row-major over the lattice: rows run from the largest
/// imaginary part downwards, columns from the smallest real part upwards.
/// Each point carries a Gray label whose leading half of bits encodes the
/// imaginary level and trailing half the real level, so that lattice
/// neighbours differ in exactly one bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    labels: Vec<u32>,
    bits_per_symbol: usize,
    /// label -> point index
    by_label: Vec<usize>,
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl Constellation {
    /// Builds the unit-energy Gray-labelled QAM alphabet of size `k`.
    pub fn new(k: usize) -> Result<Self> {
        let side = match k {
            4 => 2u32,
            16 => 4,
            64 => 8,
            _ => {
                return Err(Error::Config(format!(
                    "unsupported constellation size {k}; expected 4, 16 or 64"
                )))
            }
        };
        let half_bits = side.trailing_zeros();
        let bits_per_symbol = 2 * half_bits as usize;

        let mut raw = Vec::with_capacity(k);
        let mut labels = Vec::with_capacity(k);
        for row in 0..side {
            // row 0 is the top of the lattice
            let im = (side - 1) as f64 - 2.0 * row as f64;
            for col in 0..side {
                let re = -((side - 1) as f64) + 2.0 * col as f64;
                raw.push(C64::new(re, im));
                // Gray index counts from the positive end of each axis.
                let im_bits = gray(row);
                let re_bits = gray(side - 1 - col);
                labels.push((im_bits << half_bits) | re_bits);
            }
        }

        let energy = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / k as f64;
        let scale = energy.sqrt().recip();
        let points: Vec<C64> = raw.into_iter().map(|p| p * scale).collect();

        let mut by_label = vec![0usize; k];
        for (idx, &l) in labels.iter().enumerate() {
            by_label[l as usize] = idx;
        }

        Ok(Self {
            points,
            labels,
            bits_per_symbol,
            by_label,
        })
    }

    pub fn qpsk() -> Self {
        Self::new(4).expect("QPSK is always supported")
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn point(&self, idx: usize) -> C64 {
        self.points[idx]
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    /// Index of the point carrying Gray label `label`.
    pub fn index_of_label(&self, label: u32) -> usize {
        self.by_label[label as usize]
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest_index(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn quantize(&self, z: C64) -> C64 {
        self.points[self.nearest_index(z)]
    }

    /// Largest squared distance from `z` to any point.
    pub fn max_sq_distance(&self, z: C64) -> f64 {
        self.points
            .iter()
            .map(|p| (z - p).norm_sqr())
            .fold(0.0, f64::max)
    }

    /// Appends the `bits_per_symbol` label bits of point `idx`, MSB first.
    pub fn push_label_bits(&self, idx: usize, out: &mut Vec<u8>) {
        let label = self.labels[idx];
        for b in (0..self.bits_per_symbol).rev() {
            out.push(((label >> b) & 1) as u8);
        }
    }
}

/// Maps a bit vector (one `0`/`1` per entry) onto constellation symbols.
pub fn map_bits(bits: &[u8], c: &Constellation) -> Result<Vec<C64>> {
    let bps = c.bits_per_symbol();
    if !bits.len().is_multiple_of(bps) {
        return Err(Error::BitLength {
            len: bits.len(),
            bits_per_symbol: bps,
        });
    }
    Ok(bits
        .chunks_exact(bps)
        .map(|chunk| {
            let label = chunk
                .iter()
                .fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1));
            c.point(c.index_of_label(label))
        })
        .collect())
}

/// Nearest-point hard decision, returning the label bits of each symbol.
pub fn demap_hard(symbols: &[C64], c: &Constellation) -> Vec<u8> {
    let mut out = Vec::with_capacity(symbols.len() * c.bits_per_symbol());
    for &z in symbols {
        c.push_label_bits(c.nearest_index(z), &mut out);
    }
    out
}

/// Label bits for a sequence of point indices.
pub fn indices_to_bits(indices: &[usize], c: &Constellation) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() * c.bits_per_symbol());
    for &i in indices {
        c.push_label_bits(i, &mut out);
    }
    out
}

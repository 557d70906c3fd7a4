use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous block of a [`ParameterSet`]. Weights are stored row-major
/// with shape `(outputs, inputs)`; biases have shape `(outputs, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: ParamKind,
    pub shape: (usize, usize),
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<ParamBlock>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(blocks: Vec<ParamBlock>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total = 0;
        for b in &blocks {
            offsets.push(total);
            total += b.len();
        }
        Self {
            blocks,
            offsets,
            total,
        }
    }

    /// Layout of a dense network with the given layer widths: for every
    /// layer a weight block followed by a bias block.
    pub fn dense(dims: &[usize]) -> Self {
        let blocks = dims
            .windows(2)
            .enumerate()
            .flat_map(|(layer, w)| {
                [
                    ParamBlock {
                        layer,
                        kind: ParamKind::Weight,
                        shape: (w[1], w[0]),
                    },
                    ParamBlock {
                        layer,
                        kind: ParamKind::Bias,
                        shape: (w[1], 1),
                    },
                ]
            })
            .collect();
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, index: usize) -> std::ops::Range<usize> {
        let start = self.offsets[index];
        start..start + self.blocks[index].len()
    }

    pub fn find(&self, layer: usize, kind: ParamKind) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.layer == layer && b.kind == kind)
    }
}

/// Flat, ordered collection of model weights and biases. This is the unit
/// exchanged between server and clients; gradients, Adam moments and
/// client deltas share the same representation.
#[derive(Clone, PartialEq)]
pub struct ParameterSet {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl fmt::Debug for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterSet")
            .field("blocks", &self.layout.blocks.len())
            .field("len", &self.values.len())
            .finish()
    }
}

impl ParameterSet {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == layout.total(),
            Contract,
            "parameter count {} does not match layout total {}",
            values.len(),
            layout.total()
        );
        Ok(Self { layout, values })
    }

    /// Convenience for tests and small examples: a single weight block.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Layout::new(vec![ParamBlock {
            layer: 0,
            kind: ParamKind::Weight,
            shape: (values.len(), 1),
        }]);
        Self {
            layout: Arc::new(layout),
            values,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, index: usize) -> &[f64] {
        &self.values[self.layout.range(index)]
    }

    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParameterSet) -> Result<()> {
        ensure!(
            self.same_layout(other),
            Contract,
            "parameter layout mismatch ({} vs {} values)",
            self.len(),
            other.len()
        );
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParameterSet) -> Result<ParameterSet> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    /// Rescales to global L2 norm at most `max_norm`. Inputs already within
    /// the bound are returned bit-for-bit; scaled outputs are guaranteed to
    /// satisfy the bound when the norm is recomputed, so clipping twice is
    /// the same as clipping once.
    pub fn clip_l2(&self, max_norm: f64) -> Result<ParameterSet> {
        if !(max_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {max_norm}"
            )));
        }
        let norm = self.l2_norm();
        if norm <= max_norm {
            return Ok(self.clone());
        }
        let mut factor = max_norm / norm;
        loop {
            let mut out = self.clone();
            out.scale(factor);
            if out.l2_norm() <= max_norm {
                return Ok(out);
            }
            factor *= 1.0 - f64::EPSILON;
        }
    }

    const MAGIC: &'static [u8; 4] = b"FSPS";
    const VERSION: u32 = 1;

    /// Writes the versioned binary form: magic, version, block descriptors,
    /// then little-endian f64 values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.blocks.len() as u64).to_le_bytes())?;
        for b in &self.layout.blocks {
            w.write_all(&(b.layer as u64).to_le_bytes())?;
            w.write_all(&[match b.kind {
                ParamKind::Weight => 0u8,
                ParamKind::Bias => 1u8,
            }])?;
            w.write_all(&(b.shape.0 as u64).to_le_bytes())?;
            w.write_all(&(b.shape.1 as u64).to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("malformed parameter set: {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r).map_err(|_| bad("truncated header"))?;
        if version != Self::VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n_blocks = read_u64(r).map_err(|_| bad("truncated header"))? as usize;
        if n_blocks > 1 << 16 {
            return Err(bad("implausible block count"));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let layer = read_u64(r).map_err(|_| bad("truncated layout"))? as usize;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)
                .map_err(|_| bad("truncated layout"))?;
            let kind = match kind[0] {
                0 => ParamKind::Weight,
                1 => ParamKind::Bias,
                k => return Err(bad(&format!("unknown block kind {k}"))),
            };
            let rows = read_u64(r).map_err(|_| bad("truncated layout"))? as usize;
            let cols = read_u64(r).map_err(|_| bad("truncated layout"))? as usize;
            blocks.push(ParamBlock {
                layer,
                kind,
                shape: (rows, cols),
            });
        }
        let layout = Layout::new(blocks);
        let count = read_u64(r).map_err(|_| bad("truncated values"))? as usize;
        if count != layout.total() {
            return Err(bad("value count does not match layout"));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_bits(
                read_u64(r).map_err(|_| bad("truncated values"))?,
            ));
        }
        Ok(Self {
            layout: Arc::new(layout),
            values,
        })
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

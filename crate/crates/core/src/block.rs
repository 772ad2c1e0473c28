//! Block-indexed dense storage for stacked time operators.

use std::collections::BTreeMap;

use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{from_rows, to_rows, Mat};

/// A `block_rows × block_cols` grid of `row_dim × col_dim` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pub block_rows: usize,
    pub block_cols: usize,
    pub row_dim: usize,
    pub col_dim: usize,
    blocks: Vec<Mat>,
}

impl BlockMatrix {
    pub fn zeros(block_rows: usize, block_cols: usize, row_dim: usize, col_dim: usize) -> Self {
        BlockMatrix {
            block_rows,
            block_cols,
            row_dim,
            col_dim,
            blocks: vec![Mat::zeros(row_dim, col_dim); block_rows * block_cols],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> &Mat {
        &self.blocks[k * self.block_cols + j]
    }

    #[inline]
    pub fn get_mut(&mut self, k: usize, j: usize) -> &mut Mat {
        &mut self.blocks[k * self.block_cols + j]
    }

    pub fn set(&mut self, k: usize, j: usize, m: Mat) {
        assert_eq!(m.shape(), (self.row_dim, self.col_dim), "block shape");
        self.blocks[k * self.block_cols + j] = m;
    }

    pub fn nrows(&self) -> usize {
        self.block_rows * self.row_dim
    }

    pub fn ncols(&self) -> usize {
        self.block_cols * self.col_dim
    }

    pub fn to_dense(&self) -> Mat {
        let mut d = Mat::zeros(self.nrows(), self.ncols());
        for k in 0..self.block_rows {
            for j in 0..self.block_cols {
                d.view_mut((k * self.row_dim, j * self.col_dim), (self.row_dim, self.col_dim))
                    .copy_from(self.get(k, j));
            }
        }
        d
    }

    pub fn from_dense(d: &Mat, block_rows: usize, block_cols: usize, row_dim: usize, col_dim: usize) -> Self {
        assert_eq!(d.shape(), (block_rows * row_dim, block_cols * col_dim), "dense shape");
        let mut b = Self::zeros(block_rows, block_cols, row_dim, col_dim);
        for k in 0..block_rows {
            for j in 0..block_cols {
                b.set(k, j, d.view((k * row_dim, j * col_dim), (row_dim, col_dim)).into_owned());
            }
        }
        b
    }

    /// Max-abs entry over blocks with `j + lag > k`.
    pub fn above_band(&self, lag: usize) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.block_rows {
            for j in 0..self.block_cols {
                if j + lag > k {
                    m = self.get(k, j).iter().fold(m, |a, v| a.max(v.abs()));
                }
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &BlockMatrix) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &BlockMatrix) -> bool {
        (self.block_rows, self.block_cols, self.row_dim, self.col_dim)
            == (other.block_rows, other.block_cols, other.row_dim, other.col_dim)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    block_rows: usize,
    block_cols: usize,
    row_dim: usize,
    col_dim: usize,
    blocks: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Serialize for BlockMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut blocks = BTreeMap::new();
        for k in 0..self.block_rows {
            for j in 0..self.block_cols {
                let b = self.get(k, j);
                if b.iter().any(|v| *v != 0.0) {
                    blocks.insert(format!("{k},{j}"), to_rows(b));
                }
            }
        }
        BlockDoc {
            block_rows: self.block_rows,
            block_cols: self.block_cols,
            row_dim: self.row_dim,
            col_dim: self.col_dim,
            blocks,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = BlockDoc::deserialize(d)?;
        let mut m = BlockMatrix::zeros(doc.block_rows, doc.block_cols, doc.row_dim, doc.col_dim);
        for (key, rows) in doc.blocks {
            let (k, j) = key
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| D::Error::custom(format!("bad block key {key:?}")))?;
            if k >= doc.block_rows || j >= doc.block_cols {
                return Err(D::Error::custom(format!("block {key} out of range")));
            }
            let b = if rows.is_empty() {
                Mat::zeros(doc.row_dim, doc.col_dim)
            } else {
                from_rows(&rows).ok_or_else(|| D::Error::custom("ragged block"))?
            };
            if b.shape() != (doc.row_dim, doc.col_dim) {
                return Err(D::Error::custom(format!("block {key} has wrong shape")));
            }
            m.set(k, j, b);
        }
        Ok(m)
    }
}

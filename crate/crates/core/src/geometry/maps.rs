use crate::error::{Error, Result};

fn check_len(width: usize, height: usize, len: usize, what: &str) -> Result<()> {
    if width * height != len {
        return Err(Error::Format(format!(
            "{what}: {len} entries for a {width}x{height} grid"
        )));
    }
    Ok(())
}

/// Bilinear interpolation at raw position `(x, y)`. Returns `None` outside the
/// grid or when any contributing neighbour is invalid.
fn bilerp<const N: usize>(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    fetch: impl Fn(usize, usize) -> Option<[f64; N]>,
) -> Option<[f64; N]> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let ax = x - x0 as f64;
    let ay = y - y0 as f64;
    let mut out = [0.0; N];
    for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
        for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let v = fetch(x0 + dx, y0 + dy)?;
            for c in 0..N {
                out[c] += w * v[c];
            }
        }
    }
    Some(out)
}

/// Dense metric depth with an explicit validity mask. Valid entries are
/// finite and strictly positive; invalid entries carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        check_len(width, height, values.len(), "depth values")?;
        check_len(width, height, valid.len(), "depth mask")?;
        if let Some(i) = values
            .iter()
            .zip(&valid)
            .position(|(&d, &ok)| ok && !(d.is_finite() && d > 0.0))
        {
            return Err(Error::InvalidDepth(format!(
                "valid pixel ({}, {}) has depth {}",
                i % width,
                i / width,
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map from a per-pixel closure; `None` marks the pixel invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                match f(x, y) {
                    Some(d) => {
                        values.push(d);
                        valid.push(true);
                    }
                    None => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(width, height, values, valid)
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height], vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        bilerp(self.width, self.height, x, y, |i, j| self.get(i, j).map(|d| [d])).map(|[d]| d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Copy with a single pixel's depth replaced (must stay valid).
    pub fn with_value(&self, x: usize, y: usize, depth: f64) -> Result<Self> {
        let mut values = self.values.clone();
        let mut valid = self.valid.clone();
        let i = y * self.width + x;
        values[i] = depth;
        valid[i] = true;
        Self::new(self.width, self.height, values, valid)
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.valid[i] = false;
        self.values[i] = 0.0;
    }
}

/// Dense per-pixel displacement `(F_x, F_y)` in pixels with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        vectors: Vec<[f64; 2]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_len(width, height, vectors.len(), "flow vectors")?;
        check_len(width, height, valid.len(), "flow mask")?;
        if vectors
            .iter()
            .zip(&valid)
            .any(|(v, &ok)| ok && !(v[0].is_finite() && v[1].is_finite()))
        {
            return Err(Error::Format("valid flow vector is not finite".into()));
        }
        Ok(Self {
            width,
            height,
            vectors,
            valid,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<[f64; 2]>,
    ) -> Result<Self> {
        let mut vectors = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                match f(x, y) {
                    Some(v) => {
                        vectors.push(v);
                        valid.push(true);
                    }
                    None => {
                        vectors.push([0.0, 0.0]);
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(width, height, vectors, valid)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![[0.0, 0.0]; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.vectors[i])
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        bilerp(self.width, self.height, x, y, |i, j| self.get(i, j))
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn scaled(&self, s: f64) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            vectors: self.vectors.iter().map(|v| [v[0] * s, v[1] * s]).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn negated(&self) -> FlowField {
        self.scaled(-1.0)
    }

    pub fn set(&mut self, x: usize, y: usize, v: Option<[f64; 2]>) {
        let i = y * self.width + x;
        match v {
            Some(v) => {
                self.vectors[i] = v;
                self.valid[i] = true;
            }
            None => {
                self.vectors[i] = [0.0, 0.0];
                self.valid[i] = false;
            }
        }
    }

    /// Largest per-component difference over pixels valid in both fields.
    pub fn max_abs_diff(&self, other: &FlowField) -> f64 {
        self.vectors
            .iter()
            .zip(&other.vectors)
            .zip(self.valid.iter().zip(&other.valid))
            .filter(|(_, (&a, &b))| a && b)
            .map(|((u, v), _)| (u[0] - v[0]).abs().max((u[1] - v[1]).abs()))
            .fold(0.0, f64::max)
    }
}

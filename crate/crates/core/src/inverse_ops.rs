//! Linear forward operators `A` and pixel-permuting transform groups.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};

/// A linear measurement operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", into = "OperatorRecord<T>", try_from = "OperatorRecord<T>")]
pub enum ForwardOperator<T: Scalar> {
    Identity { shape: Shape },
    /// Diagonal 0/1 operator; unobserved pixels read as zero.
    Mask { mask: Vec<bool>, shape: Shape },
    /// Row-major `m x n` matrix.
    Dense { matrix: Vec<T>, input_shape: Shape, output_shape: Shape },
}

impl<T: Scalar> ForwardOperator<T> {
    pub fn identity(shape: Shape) -> Self {
        ForwardOperator::Identity { shape }
    }

    pub fn mask(mask: Vec<bool>, shape: Shape) -> Result<Self> {
        if mask.len() != shape.len() {
            return Err(Error::shape(shape.len(), mask.len()));
        }
        Ok(ForwardOperator::Mask { mask, shape })
    }

    pub fn dense(matrix: Vec<T>, input_shape: Shape, output_shape: Shape) -> Result<Self> {
        if matrix.len() != input_shape.len() * output_shape.len() {
            return Err(Error::shape(
                format!("{} x {} matrix", output_shape.len(), input_shape.len()),
                format!("{} entries", matrix.len()),
            ));
        }
        Ok(ForwardOperator::Dense { matrix, input_shape, output_shape })
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            ForwardOperator::Identity { shape } | ForwardOperator::Mask { shape, .. } => *shape,
            ForwardOperator::Dense { input_shape, .. } => *input_shape,
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self {
            ForwardOperator::Identity { shape } | ForwardOperator::Mask { shape, .. } => *shape,
            ForwardOperator::Dense { output_shape, .. } => *output_shape,
        }
    }

    /// Observed entries of a mask; `None` for other operators.
    pub fn observed(&self) -> Option<&[bool]> {
        match self {
            ForwardOperator::Mask { mask, .. } => Some(mask),
            _ => None,
        }
    }

    fn check(expected: Shape, x: &ImageTensor<T>) -> Result<()> {
        if x.shape() != expected {
            return Err(Error::shape(expected, x.shape()));
        }
        Ok(())
    }

    /// `A x`.
    pub fn apply(&self, x: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Self::check(self.input_shape(), x)?;
        match self {
            ForwardOperator::Identity { .. } => Ok(x.clone()),
            ForwardOperator::Mask { mask, .. } => Ok(masked(x, mask)),
            ForwardOperator::Dense { matrix, output_shape, .. } => {
                let n = x.len();
                let out = (0..output_shape.len())
                    .map(|r| matrix[r * n..(r + 1) * n].iter().zip(x.iter()).fold(T::zero(), |a, (&m, &v)| a + m * v))
                    .collect();
                ImageTensor::new(out, *output_shape)
            }
        }
    }

    /// `Aᵀ y`.
    pub fn adjoint(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Self::check(self.output_shape(), y)?;
        match self {
            ForwardOperator::Identity { .. } => Ok(y.clone()),
            ForwardOperator::Mask { mask, .. } => Ok(masked(y, mask)),
            ForwardOperator::Dense { matrix, input_shape, .. } => {
                let n = input_shape.len();
                let mut out = vec![T::zero(); n];
                for (r, &yr) in y.iter().enumerate() {
                    for (o, &m) in out.iter_mut().zip(&matrix[r * n..(r + 1) * n]) {
                        *o += m * yr;
                    }
                }
                ImageTensor::new(out, *input_shape)
            }
        }
    }

    /// Row-major `m x n` matrix of the operator.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let (m, n) = (self.output_shape().len(), self.input_shape().len());
        match self {
            ForwardOperator::Identity { .. } | ForwardOperator::Mask { .. } => {
                let mask = self.observed();
                (0..m)
                    .map(|r| {
                        (0..n)
                            .map(|c| if r == c && mask.is_none_or(|k| k[r]) { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect()
            }
            ForwardOperator::Dense { matrix, .. } => {
                (0..m).map(|r| matrix[r * n..(r + 1) * n].iter().map(|v| v.as_f64()).collect()).collect()
            }
        }
    }
}

fn masked<T: Scalar>(x: &ImageTensor<T>, mask: &[bool]) -> ImageTensor<T> {
    let mut out = x.clone();
    for (v, &keep) in out.as_mut_slice().iter_mut().zip(mask) {
        if !keep {
            *v = T::zero();
        }
    }
    out
}

/// Mask with independent `Bernoulli(p)` entries, fixed by `seed`.
pub fn make_bernoulli_mask<T: Scalar>(shape: Shape, p: f64, seed: u64) -> Result<ForwardOperator<T>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("mask probability must lie in (0, 1], got {p}")));
    }
    let mut rng = stream(seed);
    let mask = (0..shape.len()).map(|_| rng.random::<f64>() < p).collect();
    ForwardOperator::mask(mask, shape)
}

/// Run-length encoding of a binary mask: the first value, then run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRle {
    pub first: u8,
    pub runs: Vec<usize>,
}

impl MaskRle {
    pub fn encode(mask: &[bool]) -> Self {
        let first = mask.first().copied().unwrap_or(false);
        let mut runs = Vec::new();
        let mut cur = first;
        let mut len = 0;
        for &m in mask {
            if m == cur {
                len += 1;
            } else {
                runs.push(len);
                cur = m;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        MaskRle { first: first as u8, runs }
    }

    pub fn decode(&self) -> Result<Vec<bool>> {
        if self.first > 1 {
            return Err(Error::Format("mask run-length encoding must start with 0 or 1".into()));
        }
        let mut out = Vec::with_capacity(self.runs.iter().sum());
        let mut cur = self.first == 1;
        for &r in &self.runs {
            out.extend(std::iter::repeat_n(cur, r));
            cur = !cur;
        }
        Ok(out)
    }
}

/// JSON form of a [`ForwardOperator`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct OperatorRecord<T: Scalar> {
    pub kind: String,
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_shape: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<MaskRle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<T>>,
}

impl<T: Scalar> From<ForwardOperator<T>> for OperatorRecord<T> {
    fn from(op: ForwardOperator<T>) -> Self {
        match op {
            ForwardOperator::Identity { shape } => {
                OperatorRecord { kind: "identity".into(), shape, output_shape: None, rle: None, matrix: None }
            }
            ForwardOperator::Mask { mask, shape } => OperatorRecord {
                kind: "mask".into(),
                shape,
                output_shape: None,
                rle: Some(MaskRle::encode(&mask)),
                matrix: None,
            },
            ForwardOperator::Dense { matrix, input_shape, output_shape } => OperatorRecord {
                kind: "dense".into(),
                shape: input_shape,
                output_shape: Some(output_shape),
                rle: None,
                matrix: Some(matrix),
            },
        }
    }
}

impl<T: Scalar> TryFrom<OperatorRecord<T>> for ForwardOperator<T> {
    type Error = Error;

    fn try_from(r: OperatorRecord<T>) -> Result<Self> {
        match (r.kind.as_str(), r.rle, r.matrix) {
            ("identity", None, None) => Ok(ForwardOperator::identity(r.shape)),
            ("mask", Some(rle), None) => ForwardOperator::mask(rle.decode()?, r.shape),
            ("dense", None, Some(m)) => {
                let out = r.output_shape.ok_or_else(|| Error::Format("dense operator needs output_shape".into()))?;
                ForwardOperator::dense(m, r.shape, out)
            }
            (k, ..) => Err(Error::Format(format!("malformed operator record of kind {k:?}"))),
        }
    }
}

/// A pixel permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Periodic translation: `out[r, c] = x[r − dy, c − dx]`.
    Shift { dy: i64, dx: i64 },
    /// Counter-clockwise rotation by `quarter_turns · 90°` (square images only).
    Rotate { quarter_turns: u8 },
    /// Mirror left-right.
    FlipHorizontal,
    /// Mirror top-bottom.
    FlipVertical,
}

impl Transform {
    pub fn identity() -> Self {
        Transform::Shift { dy: 0, dx: 0 }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Transform::Shift { dy, dx } => Transform::Shift { dy: -dy, dx: -dx },
            Transform::Rotate { quarter_turns } => Transform::Rotate { quarter_turns: (4 - quarter_turns % 4) % 4 },
            t => t,
        }
    }

    /// Index of the source pixel for output pixel `(r, c)`.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        match *self {
            Transform::Shift { dy, dx } => (
                (r as i64 - dy).rem_euclid(h as i64) as usize,
                (c as i64 - dx).rem_euclid(w as i64) as usize,
            ),
            Transform::Rotate { quarter_turns } => match quarter_turns % 4 {
                0 => (r, c),
                1 => (c, w - 1 - r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (h - 1 - c, r),
            },
            Transform::FlipHorizontal => (r, w - 1 - c),
            Transform::FlipVertical => (h - 1 - r, c),
        }
    }

    pub fn apply<T: Scalar>(&self, x: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let (h, w) = x.shape().dims();
        if let Transform::Rotate { quarter_turns } = *self {
            if quarter_turns % 2 == 1 && h != w {
                return Err(Error::shape("a square image for a 90 degree rotation", x.shape()));
            }
        }
        let mut out = Vec::with_capacity(x.len());
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = self.source(r, c, h, w);
                out.push(x[sr * w + sc]);
            }
        }
        ImageTensor::new(out, x.shape())
    }
}

/// Nonempty set of transforms sampled uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformGroup {
    pub elements: Vec<Transform>,
}

impl TransformGroup {
    pub fn new(elements: Vec<Transform>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("transform group must be nonempty"));
        }
        Ok(Self { elements })
    }

    /// All periodic shifts of an `h x w` image.
    pub fn shifts(h: usize, w: usize) -> Self {
        let elements = (0..h as i64)
            .flat_map(|dy| (0..w as i64).map(move |dx| Transform::Shift { dy, dx }))
            .collect();
        Self { elements }
    }

    /// The four rotations by multiples of 90°.
    pub fn rotations() -> Self {
        Self { elements: (0..4).map(|q| Transform::Rotate { quarter_turns: q }).collect() }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Transform> {
        if self.elements.is_empty() {
            return Err(Error::invalid("transform group must be nonempty"));
        }
        Ok(&self.elements[rng.random_range(0..self.elements.len())])
    }
}

pub fn apply_transform<T: Scalar>(t: &Transform, x: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    t.apply(x)
}

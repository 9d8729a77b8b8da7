//! Dense 4-D tensors over f32/f64 with a GEMM hook.

use crate::error::{Error, Result};

/// Scalar types the engine runs on: f32 for training, f64 for
/// gradient checks.
pub trait Element:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn max_with(self, other: Self) -> Self;
    /// C = alpha·A·B + beta·C with row-major (m,k) x (k,n) -> (m,n).
    /// `a_trans`/`b_trans` reinterpret the operand as its transpose
    /// without copying.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: f64,
        c: &mut [Self],
    );
}

macro_rules! impl_element {
    ($ty:ty, $gemm:path) => {
        impl Element for $ty {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(x: f64) -> Self {
                x as $ty
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
            }

            fn max_with(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: f64,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: f64,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm A size");
                assert_eq!(b.len(), k * n, "gemm B size");
                assert_eq!(c.len(), m * n, "gemm C size");
                let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha as $ty,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta as $ty,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

/// (batch, channels, freq, width) shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn count(&self) -> usize {
        self.0.iter().product()
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Shape-carrying dense array, row-major over (n, c, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Shape,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![E::ZERO; shape.count()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: E) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.count()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c() + c) * self.shape.h() + h) * self.shape.w() + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: E) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast element type (f32 <-> f64) via f64.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

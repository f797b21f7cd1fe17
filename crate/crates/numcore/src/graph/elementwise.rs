use super::{GradBuf, Graph, Op, Var};
use crate::error::{dim_err, NumError, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

impl<T: Element> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(
                op,
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub(super) fn mul_backward(&self, a: Var, b: Var, g: &[T], buf: &mut GradBuf<T>) {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if let Some(ga) = buf.slot(a) {
            for ((d, &s), &y) in ga.iter_mut().zip(g).zip(vb) {
                *d += s * y;
            }
        }
        if let Some(gb) = buf.slot(b) {
            for ((d, &s), &x) in gb.iter_mut().zip(g).zip(va) {
                *d += s * x;
            }
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| {
            // Split by sign so exp never overflows.
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.abs());
        self.push("abs", v, Op::Abs(a), &[a])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_f64(self.value(a).numel() as f64);
        let v = Tensor::scalar(self.value(a).sum() / n);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Mean of each row of a matrix, shape `[rows]`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let &[r, c] = self.shape(a) else {
            return dim_err("row_mean", format!("expected a matrix, got {:?}", self.shape(a)));
        };
        let inv = T::one() / T::from_f64(c as f64);
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::new(&[r], data)?;
        self.push("row_mean", v, Op::RowMean(a), &[a])
    }

    /// `[r]` vector repeated into an `[r, cols]` matrix.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let &[r] = self.shape(a) else {
            return dim_err("broadcast_cols", format!("expected a vector, got {:?}", self.shape(a)));
        };
        let data = self
            .value(a)
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, cols))
            .collect();
        let v = Tensor::new(&[r, cols], data)?;
        self.push("broadcast_cols", v, Op::BroadcastCols(a), &[a])
    }

    /// Row `index` of an `[n, d]` table, shape `[d]`.
    pub fn gather_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let &[n, d] = self.shape(table) else {
            return dim_err("gather_row", format!("expected a table, got {:?}", self.shape(table)));
        };
        if index >= n {
            return Err(NumError::Contract(format!(
                "row {index} out of range for table with {n} rows"
            )));
        }
        let v = Tensor::new(&[d], self.value(table).data()[index * d..(index + 1) * d].to_vec())?;
        self.push("gather_row", v, Op::GatherRow { table, index }, &[table])
    }

    /// Inner product of two same-shape tensors, shape `[1]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }
}

use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// Affine map `input [N, F] x weight [F, G] + bias [G]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = match self.shape(input) {
            &[n, f] => (n, f),
            s => return Err(Error::shape("dense", format!("input must be [N, F], got {s:?}"))),
        };
        let g = match self.shape(weight) {
            &[wf, g] if wf == f => g,
            s => {
                return Err(Error::shape(
                    "dense",
                    format!("weight {s:?} does not match input features {f}"),
                ))
            }
        };
        if self.shape(bias) != [g] {
            return Err(Error::shape(
                "dense",
                format!("bias {:?}, expected [{g}]", self.shape(bias)),
            ));
        }
        let mut out = vec![T::zero(); n * g];
        for row in out.chunks_mut(g) {
            row.copy_from_slice(self.value(bias).data());
        }
        T::gemm(n, f, g, self.value(input).data(), false, self.value(weight).data(), false, &mut out, T::one());
        let value = Tensor::new([n, g], out)?;

        self.custom("dense", &[input, weight, bias], value, move |ctx| {
            let gy = ctx.grad.data();
            let dx = ctx.needs(0).then(|| {
                let mut dx = vec![T::zero(); n * f];
                T::gemm(n, g, f, gy, false, ctx.input(1).data(), true, &mut dx, T::zero());
                Tensor::new([n, f], dx).unwrap()
            });
            let dw = ctx.needs(1).then(|| {
                let mut dw = vec![T::zero(); f * g];
                T::gemm(f, n, g, ctx.input(0).data(), true, gy, false, &mut dw, T::zero());
                Tensor::new([f, g], dw).unwrap()
            });
            let db = ctx.needs(2).then(|| {
                let mut db = vec![T::zero(); g];
                for row in gy.chunks(g) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                Tensor::new([g], db).unwrap()
            });
            vec![dx, dw, db]
        })
    }
}

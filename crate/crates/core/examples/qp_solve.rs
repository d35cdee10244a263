//! The dense active-set QP solver on a small box- and row-constrained problem.

use nalgebra::{DMatrix, DVector};
use wholebody::qp::{solve_qp, QpProblem};

fn main() -> wholebody::Result<()> {
    // min ½‖x − (1, 2)‖²  s.t.  x0 + x1 ≤ 1,  −0.5 ≤ x ≤ 0.8
    let p = QpProblem {
        h: DMatrix::identity(2, 2),
        g: DVector::from_vec(vec![-1.0, -2.0]),
        a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        b: DVector::from_vec(vec![1.0]),
        lb: DVector::from_element(2, -0.5),
        ub: DVector::from_element(2, 0.8),
    };
    let sol = solve_qp(&p, 1e-10, 100)?;
    println!("status      {:?} after {} iterations", sol.status, sol.iterations);
    println!("x           {:?}", sol.x.as_slice());
    println!("objective   {:.6}", p.objective(&sol.x));
    println!("row λ       {:?}", sol.row_multipliers.as_slice());
    println!("bound μ     {:?}", sol.bound_multipliers.as_slice());
    println!("residuals   primal {:.1e} stationarity {:.1e} complementarity {:.1e}",
        sol.primal_residual, sol.stationarity_residual, sol.complementarity);
    println!("\n{}", p.dump());
    Ok(())
}

//! Finite-difference check of every analytic gradient, plus the sign-flip
//! negative control.

use poselift::gradcheck::{report_text, run_gradcheck, GradcheckConfig};

fn main() -> poselift::Result<()> {
    let cfg = GradcheckConfig { trials: 5, ..Default::default() };
    print!("{}", report_text(&run_gradcheck(&[], &cfg)?));
    let flipped = GradcheckConfig { flip_sign: true, ..cfg };
    print!("{}", report_text(&run_gradcheck(&["loss_pose".to_string()], &flipped)?));
    Ok(())
}

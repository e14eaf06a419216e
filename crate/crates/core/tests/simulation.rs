mod common;

use loanvar::denn::BinaryReturnDistribution;
use loanvar::simulation::{portfolio_returns, simulate, ReturnDistribution};

#[test]
fn binary_default_frequency() {
    let d: ReturnDistribution = BinaryReturnDistribution {
        promised: 0.01,
        default_return: -0.4,
        default_probability: 0.3,
    }
    .into();
    let m = simulate(&[d], 100_000, 42).unwrap();
    let freq = m.row(0).iter().filter(|v| **v == -0.4).count() as f64 / 1e5;
    assert!((freq - 0.3).abs() < 0.005, "frequency {freq}");
    assert!(m.row(0).iter().all(|v| *v == -0.4 || *v == 0.01));
}

#[test]
fn matrix_cells_do_not_depend_on_neighbours() {
    let a: ReturnDistribution = BinaryReturnDistribution {
        promised: 0.01,
        default_return: -1.0,
        default_probability: 0.5,
    }
    .into();
    let b: ReturnDistribution = BinaryReturnDistribution {
        promised: 0.02,
        default_return: -0.5,
        default_probability: 0.1,
    }
    .into();
    let both = simulate(&[a.clone(), b], 300, 9).unwrap();
    let alone = simulate(&[a], 300, 9).unwrap();
    assert_eq!(both.row(0), alone.row(0));
    let longer = simulate(&[alone_dist()], 600, 9).unwrap();
    assert_eq!(&longer.row(0)[..300], simulate(&[alone_dist()], 300, 9).unwrap().row(0));
}

fn alone_dist() -> ReturnDistribution {
    BinaryReturnDistribution {
        promised: 0.015,
        default_return: -0.2,
        default_probability: 0.25,
    }
    .into()
}

#[test]
fn identical_rows_make_weights_irrelevant() {
    let d = alone_dist();
    let m = simulate(&[d.clone()], 200, 1).unwrap();
    let rows = loanvar::simulation::ScenarioMatrix::from_rows(vec![m.row(0).to_vec(); 3], 1).unwrap();
    let a = portfolio_returns(&[1.0, 0.0, 0.0], &rows).unwrap();
    let b = portfolio_returns(&[0.2, 0.3, 0.5], &rows).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-15);
    }
}

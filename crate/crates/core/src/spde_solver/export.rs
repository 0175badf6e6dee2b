use std::io::{Read, Write};

use super::step::Trajectory;
use super::SolverError;
use crate::container::{self, FieldSection};
use crate::sde_sim::PathBundle;

/// Long-format CSV: `t, x1.., value`, one row per recorded node value.
pub fn write_snapshots_csv<W: Write>(w: W, traj: &Trajectory) -> Result<(), SolverError> {
    let grid = &traj.grid;
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=grid.d).map(|i| format!("x{i}")));
    header.push("value".into());
    wr.write_record(&header)?;
    let mut x = vec![0.0; grid.d];
    for s in traj.iter() {
        for (p, v) in s.values.iter().enumerate() {
            grid.coords(p, &mut x);
            let mut rec = vec![format!("{:?}", s.t)];
            rec.extend(x.iter().map(|c| format!("{c:?}")));
            rec.push(format!("{v:?}"));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Path container with a field section holding every recorded state. Runs
/// without an observation path store an empty path block.
pub fn write_snapshots_binary<W: Write>(
    w: W,
    traj: &Trajectory,
    paths: Option<&PathBundle>,
) -> Result<(), SolverError> {
    let empty = PathBundle {
        d: 0,
        k: 0,
        m: 0,
        dt: traj.dt,
        seed: 0,
        x: Vec::new(),
        y: Vec::new(),
        dw: Vec::new(),
    };
    let section = FieldSection {
        dim: traj.grid.d,
        n: traj.grid.n,
        half_width: traj.grid.half_width,
        times: traj.times().collect(),
        values: traj.iter().map(|s| s.values.clone()).collect(),
    };
    container::write(w, paths.unwrap_or(&empty), Some(&section))?;
    Ok(())
}

pub fn read_snapshots_binary<R: Read>(r: R) -> Result<(PathBundle, FieldSection), SolverError> {
    let (paths, fields) = container::read(r)?;
    let fields =
        fields.ok_or_else(|| SolverError::Input("container has no field section".into()))?;
    Ok((paths, fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DivergenceFormSpec;
    use crate::rng::Increments;
    use crate::spde_solver::{solve, FieldState, Grid, SolverOptions};

    #[test]
    fn binary_snapshots_round_trip() {
        let g = Grid::new(2, 1.0, 6).unwrap();
        let spec = DivergenceFormSpec::new(2, 0, |_, _, a| {
            a.copy_from_slice(&[1.0, 0.2, 0.2, 1.0]);
        })
        .autonomous(true);
        let u0 = FieldState::from_fn(&g, 0.0, |x| 1.0 - x[0] * x[1]).unwrap();
        let tr = solve(
            &spec,
            &g,
            u0,
            &Increments::zeros(0, 2, 0.05),
            0.1,
            &SolverOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_snapshots_binary(&mut buf, &tr, None).unwrap();
        let (_, f) = read_snapshots_binary(&buf[..]).unwrap();
        assert_eq!(f.times, vec![0.0, 0.05, 0.1]);
        assert_eq!(f.values[2], tr.states[2].values);
        let mut csv = Vec::new();
        write_snapshots_csv(&mut csv, &tr).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 36);
        assert!(text.starts_with("t,x1,x2,value"));
    }
}

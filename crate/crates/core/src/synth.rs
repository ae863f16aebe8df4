//! Seeded synthetic instances: regression data with random polytopes, and a
//! tabular student-grades table.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constraints::ConstraintSet;
use crate::data::{Cell, Dataset, RawTable};
use crate::error::Result;

/// Regression data paired with a polyhedral feasible set over its outputs.
#[derive(Debug, Clone)]
pub struct PolytopeInstance {
    pub data: Dataset,
    pub constraints: ConstraintSet,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` rows, `d` uniform features, a noisy linear target clipped to `[0, 1]`.
pub fn linear_data(n: usize, d: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen::<f64>());
    let w: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|j| w[j] * x[(i, j)]).sum::<f64>() + noise * normal(rng))
        .collect();
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let y = raw.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect();
    Dataset::from_parts(x, y)
}

/// `m` halfspaces with unit normals, all containing a point near the center
/// of the unit cube; each sits a random slack in `[0, max_slack)` beyond it.
pub fn random_polytope(n: usize, m: usize, max_slack: f64, rng: &mut ChaCha8Rng) -> Result<ConstraintSet> {
    let center: Vec<f64> = (0..n).map(|_| 0.5 + 0.1 * (rng.gen::<f64>() - 0.5)).collect();
    let rows = (0..m)
        .map(|_| {
            let mut a: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.iter_mut().for_each(|v| *v /= norm);
            let b = a.iter().zip(&center).map(|(x, c)| x * c).sum::<f64>() + max_slack * rng.gen::<f64>();
            (a, b)
        })
        .collect();
    ConstraintSet::polyhedron(n, rows, vec![])
}

/// A seeded instance with `d = 3` features and `m` halfspaces.
pub fn polytope_instance(n: usize, m: usize, seed: u64) -> Result<PolytopeInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = linear_data(n, 3, 0.3, &mut rng)?;
    let constraints = random_polytope(n, m, 0.3, &mut rng)?;
    Ok(PolytopeInstance { data, constraints })
}

const STUDENT_COLUMNS: [&str; 33] = [
    "school", "sex", "age", "address", "famsize", "Pstatus", "Medu", "Fedu", "Mjob", "Fjob", "reason", "guardian",
    "traveltime", "studytime", "failures", "schoolsup", "famsup", "paid", "activities", "nursery", "higher",
    "internet", "romantic", "famrel", "freetime", "goout", "Dalc", "Walc", "health", "absences", "G1", "G2", "G3",
];

/// Student-grades table with the usual 33 columns: demographic and school
/// attributes, three period grades `G1`, `G2`, `G3` on a 0 to 20 scale.
/// Grades depend on `sex` among other attributes, so fairness constraints on
/// `sex` bind.
pub fn student_like(n: usize, seed: u64) -> Result<RawTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = ["at_home", "health", "other", "services", "teacher"];
    let reasons = ["course", "home", "reputation", "other"];
    let guardians = ["mother", "father", "other"];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let r = &mut rng;
        let pick = |r: &mut ChaCha8Rng, p: f64, a: &str, b: &str| -> String { if r.gen::<f64>() < p { a } else { b }.to_string() };
        let likert = |r: &mut ChaCha8Rng, mean: f64| -> i64 { (mean + 1.1 * normal(r)).round().clamp(1.0, 5.0) as i64 };

        let school = pick(r, 0.65, "GP", "MS");
        let female = r.gen::<f64>() < 0.59;
        let age = (16.7 + 1.2 * normal(r)).round().clamp(15.0, 22.0) as i64;
        let address = pick(r, 0.7, "U", "R");
        let famsize = pick(r, 0.7, "GT3", "LE3");
        let pstatus = pick(r, 0.88, "T", "A");
        let medu = r.gen_range(0..=4i64);
        let fedu = (medu + r.gen_range(-1..=1i64)).clamp(0, 4);
        let mjob = jobs[r.gen_range(0..jobs.len())].to_string();
        let fjob = jobs[r.gen_range(0..jobs.len())].to_string();
        let reason = reasons[r.gen_range(0..reasons.len())].to_string();
        let guardian = guardians[r.gen_range(0..guardians.len())].to_string();
        let traveltime = r.gen_range(1..=4i64).min(r.gen_range(1..=4i64));
        let studytime = (if female { 2.3 } else { 1.7 } + 0.8 * normal(r)).round().clamp(1.0, 4.0) as i64;
        let failures = if r.gen::<f64>() < 0.83 { 0 } else { r.gen_range(1..=3i64) };
        let schoolsup = pick(r, 0.1, "yes", "no");
        let famsup = pick(r, 0.6, "yes", "no");
        let paid = pick(r, 0.06, "yes", "no");
        let activities = pick(r, 0.49, "yes", "no");
        let nursery = pick(r, 0.8, "yes", "no");
        let higher = r.gen::<f64>() < 0.9;
        let internet = pick(r, 0.77, "yes", "no");
        let romantic = pick(r, 0.37, "yes", "no");
        let famrel = likert(r, 3.9);
        let freetime = likert(r, 3.2);
        let goout = likert(r, 3.2);
        let dalc = likert(r, if female { 1.2 } else { 1.8 });
        let walc = (dalc + r.gen_range(0..=2i64)).clamp(1, 5);
        let health = likert(r, 3.5);
        let absences = (normal(r).abs() * 5.0).round() as i64;

        let ability = 11.0
            + if female { 0.9 } else { -0.4 }
            + if school == "GP" { 0.8 } else { -0.6 }
            + 0.5 * (studytime as f64 - 2.0)
            - 1.6 * failures as f64
            + 0.35 * (medu as f64 - 2.0)
            + if higher { 1.2 } else { -1.8 }
            - 0.3 * (dalc as f64 - 1.5)
            - 0.05 * absences as f64
            + 2.0 * normal(r);
        let grade = |v: f64| v.round().clamp(0.0, 20.0);
        let g1 = grade(ability + 1.0 * normal(r));
        let g2 = grade(0.35 * g1 + 0.65 * ability + 0.8 * normal(r));
        let g3 = if r.gen::<f64>() < 0.02 { 0.0 } else { grade(0.2 * g1 + 0.8 * g2 + 0.7 * normal(r)) };

        let text = Cell::Text;
        let num = |v: i64| Cell::Num(v as f64);
        rows.push(vec![
            text(school),
            text(if female { "F" } else { "M" }.into()),
            num(age),
            text(address),
            text(famsize),
            text(pstatus),
            num(medu),
            num(fedu),
            text(mjob),
            text(fjob),
            text(reason),
            text(guardian),
            num(traveltime),
            num(studytime),
            num(failures),
            text(schoolsup),
            text(famsup),
            text(paid),
            text(activities),
            text(nursery),
            text(if higher { "yes" } else { "no" }.into()),
            text(internet),
            text(romantic),
            num(famrel),
            num(freetime),
            num(goout),
            num(dalc),
            num(walc),
            num(health),
            num(absences),
            Cell::Num(g1),
            Cell::Num(g2),
            Cell::Num(g3),
        ]);
    }
    RawTable::new(STUDENT_COLUMNS.iter().map(|s| s.to_string()).collect(), rows)
}

/// Write a table as CSV with a header row.
pub fn write_csv<W: std::io::Write>(table: &RawTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| crate::error::Error::Parse { line: 0, message: e.to_string() };
    w.write_record(&table.columns).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| match c {
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
        }))
        .map_err(io)?;
    }
    w.flush().map_err(|e| io(e.into()))?;
    Ok(())
}

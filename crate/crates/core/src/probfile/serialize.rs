//! CSV and JSON output. JSON keys keep insertion order and every float is printed
//! in scientific notation with 17 significant digits, so output is byte-stable.

use std::io;

use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Map, Value};

use crate::degree::{AveragedMapAudit, DegreeCertificate};
use crate::densela::Mat;
use crate::matpath::{FrameAudit, LemmaReport};
use crate::periodic::{Branch, TPair};
use crate::slred::ReductionReport;
use crate::transform::Trajectory;

/// Pretty printer with fixed-width scientific floats.
struct SciFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Renders a value as pretty JSON with a trailing newline.
pub fn to_json_string(value: &Value) -> String {
    let mut buf = Vec::new();
    let fmt = SciFormatter { inner: PrettyFormatter::with_indent(b"  ") };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    serde::Serialize::serialize(value, &mut ser).expect("writing to a Vec cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Non-finite floats become `null`.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn vec_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn mat_json(m: &Mat) -> Value {
    Value::Array((0..m.rows()).map(|i| vec_json(m.row(i))).collect())
}

pub fn frame_audit_json(label: &str, a: &FrameAudit) -> Value {
    json!({
        "path": label,
        "grid": a.grid,
        "tol": num(a.tol),
        "orthogonal": a.orthogonal,
        "orthogonality_residual": num(a.orthogonality_residual),
        "right_constant": a.right_constant,
        "M": mat_json(&a.m),
        "right_product_residual": num(a.right_product_residual),
        "skewness_residual": num(a.skewness_residual),
        "left_constant": a.left_constant,
        "K": mat_json(&a.k),
        "left_product_residual": num(a.left_product_residual),
        "products_equal": a.product_gap <= a.tol,
        "product_gap": num(a.product_gap),
        "second_product": mat_json(&a.second_product),
        "second_product_residual": num(a.second_product_residual),
        "hypotheses_hold": a.holds(),
    })
}

pub fn lemma_report_json(label: &str, r: &LemmaReport) -> Value {
    json!({
        "path": label,
        "grid": r.grid,
        "preconditions_hold": r.preconditions_hold,
        "residuals": {
            "second_derivative_symmetry": num(r.lemma1_symmetry),
            "second_derivative_sum": num(r.lemma1_second),
            "velocity_gram": num(r.lemma2),
            "second_derivative_square": num(r.prop1),
            "left_second_derivative_sum": num(r.rem44_a),
            "left_velocity_gram": num(r.rem44_b),
            "left_second_derivative_square": num(r.rem44_c),
        },
        "right_product_residual": num(r.prop2_equivalence.0),
        "left_product_residual": num(r.prop2_equivalence.1),
        "max_identity_residual": num(r.max_identity_residual()),
    })
}

pub fn degree_json(problem: &str, c: &DegreeCertificate) -> Value {
    let zeros: Vec<Value> = c
        .zeros
        .iter()
        .map(|z| json!({ "point": vec_json(&z.point), "det": num(z.det), "sign": z.sign, "residual": num(z.residual) }))
        .collect();
    let mut obj = Map::new();
    obj.insert("problem".into(), json!(problem));
    obj.insert("method".into(), json!(c.method.as_str()));
    obj.insert("degree".into(), json!(c.degree));
    if let Some(s) = c.linear_sign {
        obj.insert("linear_sign".into(), json!(s));
    }
    obj.insert("boundary_margin".into(), num(c.boundary_margin));
    obj.insert("zeros".into(), Value::Array(zeros));
    Value::Object(obj)
}

pub fn averaged_audit_json(problem: &str, a: &AveragedMapAudit) -> Value {
    let probes: Vec<Value> = a
        .probes
        .iter()
        .map(|(p, c, w)| json!({ "point": vec_json(p), "computed": vec_json(c), "closed_form": vec_json(w) }))
        .collect();
    json!({
        "problem": problem,
        "quadrature_nodes": a.quad_n,
        "frame_drift": num(a.frame_drift),
        "refinement_gap": num(a.refinement_gap),
        "max_discrepancy": num(a.max_discrepancy),
        "agrees": a.agrees,
        "probes": probes,
    })
}

pub fn reduction_report_json(problem: &str, r: &ReductionReport, frame_suitable: bool) -> Value {
    json!({
        "problem": problem,
        "n": r.n,
        "rank": r.r,
        "grid": r.grid,
        "conditions_hold": r.conditions_hold,
        "frame_suitable": frame_suitable,
        "sigma": vec_json(&r.sigma),
        "P": mat_json(&r.p),
        "Q": mat_json(&r.q),
        "E1": mat_json(&r.e1),
        "e_block_residual": num(r.e_block_residual),
        "f_top_residual": num(r.f_top_residual),
        "c_bottom_residual": num(r.c_bottom_residual),
        "kernel_c_residual": num(r.kernel_c_residual),
        "image_f_residual": num(r.image_f_residual),
        "f3_min_det": num(r.f3_min_det),
        "f4_min_det": num(r.f4_min_det),
    })
}

pub fn trajectory_json(problem: &str, lambda: f64, coordinates: &str, tr: &Trajectory) -> Value {
    let nodes: Vec<Value> = (0..tr.len())
        .map(|k| {
            let mut node = Map::new();
            node.insert("t".into(), num(tr.t[k]));
            node.insert("x".into(), vec_json(&tr.x[k]));
            node.insert("y".into(), vec_json(&tr.y[k]));
            if let Some(dx) = &tr.dx {
                node.insert("dx".into(), vec_json(&dx[k]));
            }
            if let Some(dy) = &tr.dy {
                node.insert("dy".into(), vec_json(&dy[k]));
            }
            Value::Object(node)
        })
        .collect();
    json!({ "problem": problem, "lambda": num(lambda), "coordinates": coordinates, "nodes": nodes })
}

/// Trajectories of every pair on a branch.
pub fn branch_trajectories_json(problem: &str, b: &Branch) -> Value {
    let pairs: Vec<Value> =
        b.pairs.iter().map(|p| trajectory_json(problem, p.lambda, "original", &p.trajectory)).collect();
    json!({ "problem": problem, "termination": b.termination.as_str(), "pairs": pairs })
}

fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV header for a branch with `m` differential components.
pub fn branch_csv_header(m: usize, order: usize) -> String {
    let mut cols = vec!["step".to_string(), "lambda".to_string()];
    cols.extend((1..=m).map(|i| format!("xi0_{i}")));
    if order == 2 {
        cols.extend((1..=m).map(|i| format!("u0_{i}")));
    }
    cols.extend(
        ["sup_norm_x", "sup_norm_y", "periodicity_residual", "constraint_residual", "trivial_flag"]
            .map(String::from),
    );
    cols.join(",")
}

fn pair_row(step: usize, p: &TPair) -> String {
    let mut cols = vec![step.to_string(), csv_float(p.lambda)];
    cols.extend(p.state0.iter().map(|&v| csv_float(v)));
    cols.push(csv_float(p.sup_norm_x()));
    cols.push(csv_float(p.sup_norm_y()));
    cols.push(csv_float(p.periodicity_residual));
    cols.push(csv_float(p.constraint_residual));
    cols.push(if p.trivial { "1" } else { "0" }.to_string());
    cols.join(",")
}

/// Branch as CSV, one row per pair; an empty branch yields the header alone.
pub fn branch_csv(m: usize, order: usize, pairs: &[TPair]) -> String {
    let mut out = branch_csv_header(m, order);
    out.push('\n');
    for (k, p) in pairs.iter().enumerate() {
        out.push_str(&pair_row(k, p));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json_string(&json!({ "b": num(0.1), "a": num(-2.0), "n": 3, "x": num(f64::NAN) }));
        assert_eq!(
            s,
            "{\n  \"b\": 1.0000000000000001e-1,\n  \"a\": -2.0000000000000000e0,\n  \"n\": 3,\n  \"x\": null\n}\n"
        );
    }

    #[test]
    fn empty_branch_is_header_only() {
        assert_eq!(
            branch_csv(2, 1, &[]),
            "step,lambda,xi0_1,xi0_2,sup_norm_x,sup_norm_y,periodicity_residual,constraint_residual,trivial_flag\n"
        );
        assert!(branch_csv_header(1, 2).contains("xi0_1,u0_1,"));
    }
}

//! Built-in problem files, loadable by name.

use crate::error::{Error, Result};
use crate::probfile::{parse_problem, Problem, ProblemSpec};

struct Fixture {
    name: &'static str,
    summary: &'static str,
    text: &'static str,
}

const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "rotating_surface",
        summary: "first order, constraint surface revolving around the q axis",
        text: include_str!("../fixtures/rotating_surface.prob"),
    },
    Fixture {
        name: "rotating_surface_2nd",
        summary: "second order, same revolving surface",
        text: include_str!("../fixtures/rotating_surface_2nd.prob"),
    },
    Fixture {
        name: "commuting_h",
        summary: "first order with linear drift H = diag(1, 0)",
        text: include_str!("../fixtures/commuting_h.prob"),
    },
    Fixture {
        name: "semilinear_4x4",
        summary: "semi-linear E x' = F(t) x + lambda C(t) S(x), n = 4",
        text: include_str!("../fixtures/semilinear_4x4.prob"),
    },
    Fixture {
        name: "counterexample4",
        summary: "4x4 frame with constant but unequal one-sided products",
        text: include_str!("../fixtures/counterexample4.prob"),
    },
    Fixture {
        name: "scalar_linear",
        summary: "scalar problem with closed-form periodic solutions",
        text: include_str!("../fixtures/scalar_linear.prob"),
    },
];

pub fn names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}

/// `(name, one-line summary)` pairs.
pub fn list() -> Vec<(&'static str, &'static str)> {
    FIXTURES.iter().map(|f| (f.name, f.summary)).collect()
}

pub fn text(name: &str) -> Result<&'static str> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .map(|f| f.text)
        .ok_or_else(|| Error::UnknownIdentifier(name.to_string()))
}

pub fn spec(name: &str) -> Result<ProblemSpec> {
    parse_problem(text(name)?)
}

pub fn load(name: &str) -> Result<Problem> {
    spec(name)?.build()
}

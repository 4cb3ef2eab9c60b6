//! Built-in systems.

use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{Error, Result};
use crate::planar::{load_planar, PlanarDocument, PlanarSystem};
use crate::system::LinearSystem;

pub const LINEAR: [&str; 4] = [
    "double-integrator",
    "triple-integrator",
    "harmonic",
    "double-integrator-2input",
];
pub const PLANAR: [&str; 1] = ["planar-pendulum"];

pub enum Entry {
    Linear(LinearSystem),
    Planar(PlanarSystem),
}

pub fn names() -> Vec<&'static str> {
    LINEAR.iter().chain(PLANAR.iter()).copied().collect()
}

fn unknown(name: &str) -> Error {
    Error::UnknownCatalog { name: name.to_string(), available: names().join(", ") }
}

pub fn lookup(name: &str) -> Result<Entry> {
    if LINEAR.contains(&name) {
        return linear(name).map(Entry::Linear);
    }
    if PLANAR.contains(&name) {
        return planar(name).map(Entry::Planar);
    }
    Err(unknown(name))
}

fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

pub fn linear(name: &str) -> Result<LinearSystem> {
    let (a, b) = match name {
        "double-integrator" => (mat(2, 2, &[0.0, 1.0, 0.0, 0.0]), mat(2, 1, &[0.0, 1.0])),
        "triple-integrator" => (
            mat(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            mat(3, 1, &[0.0, 0.0, 1.0]),
        ),
        "harmonic" => (mat(2, 2, &[0.0, 1.0, -1.0, 0.0]), mat(2, 1, &[0.0, 1.0])),
        // The literal identity input matrix is not normal for this drift: its
        // first column e_1 satisfies A e_1 = 0. The second column is padded
        // with e_2 so that both columns pass the Kalman test.
        "double-integrator-2input" => (
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            mat(2, 2, &[1.0, 0.0, 1.0, 1.0]),
        ),
        _ => return Err(unknown(name)),
    };
    LinearSystem::new(name, a, b)
}

pub fn planar_document(name: &str) -> Result<PlanarDocument> {
    match name {
        "planar-pendulum" => Ok(serde_json::from_value(json!({
            "F": [["var", 2], ["mul", -1, ["sin", ["var", 1]]]],
            "G": [[0, ["add", 1, ["pow", ["var", 1], 2]]]],
            "box": [[-1.0, 1.0], [-1.0, 1.0]]
        }))?),
        _ => Err(unknown(name)),
    }
}

pub fn planar(name: &str) -> Result<PlanarSystem> {
    load_planar(&planar_document(name)?)
}

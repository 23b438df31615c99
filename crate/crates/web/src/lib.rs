//! WebAssembly bindings for a small in-browser demo: sample and render toy
//! faces, smooth a noisy face with a Chebyshev filter, and score two faces
//! against each other.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: meshgcn::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: demo::Scene,
    size: usize,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(subdivisions: u32, num_modes: usize, seed: u64, size: usize) -> Result<Demo, JsError> {
        Ok(Demo {
            scene: demo::Scene::new(subdivisions, num_modes, seed).map_err(js)?,
            size,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter, js_name = numModes)]
    pub fn num_modes(&self) -> usize {
        self.scene.num_modes()
    }

    #[wasm_bindgen(getter, js_name = vertexCount)]
    pub fn vertex_count(&self) -> usize {
        self.scene.vertex_count()
    }

    /// RGBA pixels of the face with the given mode coefficients.
    pub fn render(&self, coefficients: &[f64], depth: bool) -> Result<Vec<u8>, JsError> {
        let face = self.scene.face(coefficients).map_err(js)?;
        Ok(demo::to_rgba(&self.scene.render(&face, self.size, depth).map_err(js)?))
    }

    /// RGBA pixels of the smoothed noisy face; the errors go to `report`
    /// as JSON.
    pub fn smooth(&self, coefficients: &[f64], sigma: f64, order: usize, tau: f64, seed: u64) -> Result<SmoothOutput, JsError> {
        let (mesh, report) = self.scene.smooth(coefficients, sigma, order, tau, seed).map_err(js)?;
        Ok(SmoothOutput {
            rgba: demo::to_rgba(&self.scene.render(&mesh, self.size, false).map_err(js)?),
            report: serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))?,
        })
    }

    /// JSON report of face `a` against a rotated, shifted copy of face `b`.
    pub fn compare(&self, a: &[f64], b: &[f64], degrees: f64, shift: f64, margin: f64) -> Result<String, JsError> {
        let report = self.scene.compare(a, b, degrees, shift, margin).map_err(js)?;
        serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
    }
}

#[wasm_bindgen]
pub struct SmoothOutput {
    rgba: Vec<u8>,
    report: String,
}

#[wasm_bindgen]
impl SmoothOutput {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn report(&self) -> String {
        self.report.clone()
    }
}

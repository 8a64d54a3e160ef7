//! File formats: network JSON, measure (registry) JSON, dataset CSV/JSON.
//!
//! Readers walk a parsed `serde_json::Value` by hand so every rejection names
//! the JSON pointer of the offending value. Writers go through serde_json,
//! whose shortest round-trip float formatting makes load(save(x)) bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    ActivationSpec, Atom, AtomicMeasure, ChainAtom, ChainFunction, Dataset, DeepNetwork, FunctionId, FunctionNode,
    HiddenLayer, Layer1Atom, LayerSpec, Registry, WeightingSpec,
};

/// A JSON value together with its pointer, for error reporting.
#[derive(Clone, Copy)]
struct Node<'a> {
    value: &'a Value,
    pointer: &'a str,
}

struct Owned<'a> {
    value: &'a Value,
    pointer: String,
}

impl<'a> Owned<'a> {
    fn node(&self) -> Node<'_> {
        Node {
            value: self.value,
            pointer: &self.pointer,
        }
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

impl<'a> Node<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::schema(if self.pointer.is_empty() { "/" } else { self.pointer }, message)
    }

    fn object(&self) -> Result<&'a serde_json::Map<String, Value>> {
        self.value.as_object().ok_or_else(|| self.err("expected an object"))
    }

    fn field(&self, key: &str) -> Result<Owned<'a>> {
        let obj = self.object()?;
        let pointer = format!("{}/{}", self.pointer, escape(key));
        match obj.get(key) {
            Some(value) => Ok(Owned { value, pointer }),
            None => Err(Error::schema(pointer, "missing field")),
        }
    }

    fn optional(&self, key: &str) -> Result<Option<Owned<'a>>> {
        let obj = self.object()?;
        Ok(obj.get(key).map(|value| Owned {
            value,
            pointer: format!("{}/{}", self.pointer, escape(key)),
        }))
    }

    fn only_fields(&self, allowed: &[&str]) -> Result<()> {
        for key in self.object()?.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::schema(format!("{}/{}", self.pointer, escape(key)), "unknown field"));
            }
        }
        Ok(())
    }

    fn items(&self) -> Result<Vec<Owned<'a>>> {
        let arr = self.value.as_array().ok_or_else(|| self.err("expected an array"))?;
        Ok(arr
            .iter()
            .enumerate()
            .map(|(i, value)| Owned {
                value,
                pointer: format!("{}/{i}", self.pointer),
            })
            .collect())
    }

    fn number(&self) -> Result<f64> {
        self.value
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err("expected a finite number"))
    }

    fn count(&self) -> Result<usize> {
        self.value
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| self.err("expected a non-negative integer"))
    }

    fn string(&self) -> Result<&'a str> {
        self.value.as_str().ok_or_else(|| self.err("expected a string"))
    }

    fn parsed<T: std::str::FromStr>(&self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.string()?.parse().map_err(|e: T::Err| self.err(e.to_string()))
    }

    fn vector(&self) -> Result<Vec<f64>> {
        self.items()?.iter().map(|n| n.node().number()).collect()
    }

    /// A rectangular array of rows. `cols` pins the row length when known.
    fn matrix(&self, cols: Option<usize>) -> Result<Array2<f64>> {
        let rows = self.items()?;
        let mut width = cols;
        let mut data = Vec::new();
        for row in &rows {
            let values = row.node().vector()?;
            match width {
                Some(w) if w != values.len() => {
                    return Err(row.node().err(format!("expected {w} entries, found {}", values.len())))
                }
                _ => width = Some(values.len()),
            }
            data.extend(values);
        }
        Array2::from_shape_vec((rows.len(), width.unwrap_or(0)), data).map_err(|e| self.err(e.to_string()))
    }
}

fn parse(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| {
        Error::schema(
            "/",
            format!("malformed JSON at line {} column {}: {e}", e.line(), e.column()),
        )
    })
}

fn root(value: &Value) -> Node<'_> {
    Node { value, pointer: "" }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Serialize)]
struct LayerOut {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    activation: ActivationSpec,
    weighting: WeightingSpec,
}

#[derive(Serialize)]
struct NetworkOut {
    widths: Vec<usize>,
    output_dim: usize,
    layers: Vec<LayerOut>,
    #[serde(rename = "final_W")]
    final_w: Vec<Vec<f64>>,
}

pub fn network_to_json(net: &DeepNetwork) -> String {
    pretty(&NetworkOut {
        widths: net.widths(),
        output_dim: net.output_dim(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerOut {
                w: rows(&l.weights),
                b: l.bias.to_vec(),
                activation: l.activation,
                weighting: l.weighting,
            })
            .collect(),
        final_w: rows(net.final_weights()),
    })
}

pub fn network_from_json(text: &str) -> Result<DeepNetwork> {
    let value = parse(text)?;
    let top = root(&value);
    top.only_fields(&["widths", "output_dim", "layers", "final_W"])?;
    let widths_node = top.field("widths")?;
    let widths: Vec<usize> = widths_node
        .node()
        .items()?
        .iter()
        .map(|n| n.node().count())
        .collect::<Result<_>>()?;
    let layers_node = top.field("layers")?;
    let layer_items = layers_node.node().items()?;
    if layer_items.is_empty() {
        return Err(layers_node.node().err("a network needs at least one hidden layer"));
    }
    if widths.len() != layer_items.len() + 1 {
        return Err(widths_node.node().err(format!(
            "{} widths for {} layers; expected d0 followed by one width per layer",
            widths.len(),
            layer_items.len()
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(widths_node.node().err("widths must be positive"));
    }

    let mut layers = Vec::with_capacity(layer_items.len());
    for (l, item) in layer_items.iter().enumerate() {
        let node = item.node();
        node.only_fields(&["W", "b", "activation", "weighting"])?;
        let w_node = node.field("W")?;
        let weights = w_node.node().matrix(Some(widths[l]))?;
        if weights.nrows() != widths[l + 1] {
            return Err(w_node.node().err(format!(
                "expected {} rows, found {}",
                widths[l + 1],
                weights.nrows()
            )));
        }
        let b_node = node.field("b")?;
        let bias = b_node.node().vector()?;
        if bias.len() != widths[l + 1] {
            return Err(b_node.node().err(format!("expected {} entries, found {}", widths[l + 1], bias.len())));
        }
        let activation: ActivationSpec = node.field("activation")?.node().parsed()?;
        let weighting: WeightingSpec = node.field("weighting")?.node().parsed()?;
        layers.push(HiddenLayer::new(weights, Array1::from(bias), LayerSpec::new(activation, weighting)));
    }

    let output_dim = top.field("output_dim")?.node().count()?;
    let final_node = top.field("final_W")?;
    let final_weights = final_node.node().matrix(Some(*widths.last().expect("non-empty")))?;
    if final_weights.nrows() != output_dim || output_dim == 0 {
        return Err(final_node.node().err(format!(
            "expected {output_dim} rows (output_dim), found {}",
            final_weights.nrows()
        )));
    }
    DeepNetwork::new(layers, final_weights)
}

/// Measure file for functions sharing one registry. Only nodes reachable
/// from the roots are written; keys are sorted.
pub fn measure_to_json(functions: &[ChainFunction]) -> Result<String> {
    let Some(first) = functions.first() else {
        return Err(Error::contract("nothing to save"));
    };
    let registry = first.registry();
    if functions.iter().any(|f| !Arc::ptr_eq(f.registry(), registry)) {
        return Err(Error::contract("saved functions must share a registry"));
    }
    let mut entries = BTreeMap::new();
    let mut roots: Vec<FunctionId> = Vec::new();
    for f in functions {
        roots.push(f.id());
        for level in registry.reachable(&[f.id()])? {
            for id in level {
                entries.entry(id.to_string()).or_insert_with(|| {
                    registry
                        .get(&id)
                        .map(|n| n.to_json_value())
                        .unwrap_or(Value::Null)
                });
            }
        }
    }
    let doc = serde_json::json!({
        "root": roots[0].to_string(),
        "roots": roots.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        "functions": entries,
    });
    Ok(pretty(&doc))
}

/// Loads a measure file into a fresh registry. Every stored hash must match
/// the content of its entry. Returns the roots in file order.
pub fn measure_from_json(text: &str) -> Result<Vec<ChainFunction>> {
    let value = parse(text)?;
    let top = root(&value);
    top.only_fields(&["root", "roots", "functions"])?;
    let functions_node = top.field("functions")?;
    let entries = functions_node.node().object()?;

    let mut parsed: Vec<(FunctionId, FunctionNode, String)> = Vec::with_capacity(entries.len());
    for (key, entry) in entries {
        let pointer = format!("{}/{}", functions_node.pointer, escape(key));
        let node = Node {
            value: entry,
            pointer: &pointer,
        };
        let id: FunctionId = key
            .parse()
            .map_err(|e: String| Error::schema(pointer.clone(), e))?;
        let fnode = parse_function(node)?;
        if fnode.content_id() != id {
            return Err(node.err(format!("content hash is {}, not {key}", fnode.content_id())));
        }
        parsed.push((id, fnode, pointer));
    }
    parsed.sort_by_key(|(_, n, _)| n.depth());

    let registry = Registry::new();
    for (_, node, pointer) in parsed {
        registry.insert(node).map_err(|e| match e {
            Error::UnresolvedRef(id) => Error::schema(pointer, format!("unresolved function {id}")),
            Error::Contract(m) => Error::schema(pointer, m),
            other => other,
        })?;
    }

    let roots: Vec<(FunctionId, String)> = match top.optional("roots")? {
        Some(list) => list
            .node()
            .items()?
            .iter()
            .map(|n| Ok((n.node().parsed::<FunctionId>()?, n.pointer.clone())))
            .collect::<Result<_>>()?,
        None => {
            let r = top.field("root")?;
            vec![(r.node().parsed::<FunctionId>()?, r.pointer.clone())]
        }
    };
    if let (Some(r), Some(first)) = (top.optional("root")?, roots.first()) {
        if r.node().parsed::<FunctionId>()? != first.0 {
            return Err(r.node().err("root must equal the first entry of roots"));
        }
    }
    if roots.is_empty() {
        return Err(Error::schema("/roots", "no roots"));
    }
    roots
        .into_iter()
        .map(|(id, pointer)| {
            ChainFunction::from_id(&registry, id).map_err(|_| Error::schema(pointer, format!("unresolved root {id}")))
        })
        .collect()
}

fn parse_function(node: Node<'_>) -> Result<FunctionNode> {
    node.only_fields(&["depth", "atoms", "coeffs", "activations", "weightings"])?;
    let depth = node.field("depth")?.node().count()?;
    let atoms_node = node.field("atoms")?;
    let atoms = atoms_node
        .node()
        .items()?
        .iter()
        .map(|a| parse_atom(a.node(), depth))
        .collect::<Result<Vec<_>>>()?;
    let coeffs_node = node.field("coeffs")?;
    let coeffs = coeffs_node.node().vector()?;
    if coeffs.len() != atoms.len() {
        return Err(coeffs_node.node().err(format!("{} coefficients for {} atoms", coeffs.len(), atoms.len())));
    }
    let activations = node
        .field("activations")?
        .node()
        .items()?
        .iter()
        .map(|n| n.node().parsed::<ActivationSpec>())
        .collect::<Result<Vec<_>>>()?;
    let weightings = node
        .field("weightings")?
        .node()
        .items()?
        .iter()
        .map(|n| n.node().parsed::<WeightingSpec>())
        .collect::<Result<Vec<_>>>()?;
    let measure = AtomicMeasure::new(atoms, coeffs).map_err(|e| node.err(e.to_string()))?;
    FunctionNode::new(depth, measure, activations, weightings).map_err(|e| node.err(e.to_string()))
}

fn parse_atom(node: Node<'_>, depth: usize) -> Result<Atom> {
    let b = node.field("b")?.node().number()?;
    if depth == 1 {
        node.only_fields(&["v", "b"])?;
        Ok(Layer1Atom::new(node.field("v")?.node().vector()?, b).into())
    } else {
        node.only_fields(&["f", "b"])?;
        Ok(ChainAtom::new(node.field("f")?.node().parsed()?, b).into())
    }
}

/// CSV with header x_1..x_d and optionally y_1..y_D.
pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let (mut d, mut outputs) = (0, 0);
    for (k, name) in header.iter().enumerate() {
        let expect_x = format!("x_{}", d + 1);
        let expect_y = format!("y_{}", outputs + 1);
        if outputs == 0 && name == expect_x {
            d += 1;
        } else if d > 0 && name == expect_y {
            outputs += 1;
        } else {
            return Err(Error::schema(
                format!("header/{}", k + 1),
                format!("unexpected column '{name}', expected '{}'", if outputs == 0 { expect_x } else { expect_y }),
            ));
        }
    }
    if d == 0 {
        return Err(Error::schema("header", "no x_1 column"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != d + outputs {
            return Err(Error::schema(
                format!("line {line}"),
                format!("expected {} fields, found {}", d + outputs, record.len()),
            ));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::schema(format!("line {line}/column {}", k + 1), format!("'{field}' is not a finite number"))
            })?;
            if k < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, d), xs).expect("rectangular");
    let y = (outputs > 0).then(|| Array2::from_shape_vec((n, outputs), ys).expect("rectangular"));
    Dataset::new(x, y)
}

/// JSON object {"x": [[..]], "y": [[..]]} with `y` optional.
pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let value = parse(text)?;
    let top = root(&value);
    top.only_fields(&["x", "y"])?;
    let x = top.field("x")?.node().matrix(None)?;
    let y = match top.optional("y")? {
        Some(y) => Some(y.node().matrix(None)?),
        None => None,
    };
    Dataset::new(x, y)
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut header: Vec<String> = (1..=data.input_dim()).map(|k| format!("x_{k}")).collect();
    header.extend((1..=data.output_dim().unwrap_or(0)).map(|k| format!("y_{k}")));
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..data.len() {
        let mut cells: Vec<String> = data.x().row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(y) = data.y() {
            cells.extend(y.row(i).iter().map(|v| format!("{v:?}")));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// CSV of an N × D prediction matrix with header y_1..y_D.
pub fn predictions_to_csv(values: ArrayView2<f64>) -> String {
    let header: Vec<String> = (1..=values.ncols()).map(|k| format!("y_{k}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_network(path: impl AsRef<Path>) -> Result<DeepNetwork> {
    network_from_json(&fs::read_to_string(path)?)
}

pub fn write_network(path: impl AsRef<Path>, net: &DeepNetwork) -> Result<()> {
    Ok(fs::write(path, network_to_json(net))?)
}

pub fn read_measure(path: impl AsRef<Path>) -> Result<Vec<ChainFunction>> {
    measure_from_json(&fs::read_to_string(path)?)
}

pub fn write_measure(path: impl AsRef<Path>, functions: &[ChainFunction]) -> Result<()> {
    Ok(fs::write(path, measure_to_json(functions)?)?)
}

/// Reads a dataset, choosing JSON for a `.json` extension and CSV otherwise.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        dataset_from_json(&text)
    } else {
        dataset_from_csv(&text)
    }
}

/// Distinguishes a network file from a measure file by its top-level keys.
pub enum Artifact {
    Network(DeepNetwork),
    Measure(Vec<ChainFunction>),
}

pub fn read_artifact(path: impl AsRef<Path>) -> Result<Artifact> {
    let text = fs::read_to_string(path)?;
    let value = parse(&text)?;
    if root(&value).object()?.contains_key("functions") {
        measure_from_json(&text).map(Artifact::Measure)
    } else {
        network_from_json(&text).map(Artifact::Network)
    }
}

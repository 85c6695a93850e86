//! Boundary-data expressions in the cell coordinates `x`, `y`, `z`
//! (or `x0`, `x1`, ...), e.g. `x^2 - y^2` or `1 + math::sin(x)`.

use evalexpr::{build_operator_tree, ContextWithMutableVariables, HashMapContext, Value};

use matweight::{Grid, ScalarField};

use crate::CliError;

pub fn field(g: &Grid, expr: &str) -> Result<ScalarField, CliError> {
    let bad = |e: evalexpr::EvalexprError| CliError::Config(format!("field `boundary`: '{expr}': {e}"));
    let tree = build_operator_tree(expr).map_err(bad)?;
    let names = ["x", "y", "z"];
    let mut ctx = HashMapContext::new();
    let mut values = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let c = g.center(i);
        for (a, v) in c.iter().enumerate() {
            if a < names.len() {
                ctx.set_value(names[a].into(), Value::Float(*v)).map_err(bad)?;
            }
            ctx.set_value(format!("x{a}"), Value::Float(*v)).map_err(bad)?;
        }
        values.push(tree.eval_number_with_context(&ctx).map_err(bad)?);
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("field `boundary`: '{expr}' is not finite at cell {k}")));
    }
    Ok(ScalarField::new(g.clone(), values)?)
}

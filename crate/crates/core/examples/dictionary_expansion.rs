//! Expand covariates into the polynomial dictionary `b(x)`.

use covshift_dml::featmap::DictionarySpec;
use covshift_dml::{Dataset, Result};

fn main() -> Result<()> {
    let spec = DictionarySpec::quadratic(2)?;
    let names = ["a", "b"];
    let labels: Vec<String> = spec
        .exponents()
        .iter()
        .map(|e| {
            if e.is_empty() {
                "1".to_string()
            } else {
                e.iter().map(|&i| names[i]).collect::<Vec<_>>().join("*")
            }
        })
        .collect();
    println!("terms: {}", labels.join(", "));
    println!("b(3, -2) = {:?}", spec.expand(&[3.0, -2.0])?);

    let six = DictionarySpec::quadratic(6)?;
    println!("K = 6, order 2: J = {}", six.output_dim());
    let cubic = DictionarySpec::new(6, 3, true)?;
    println!("K = 6, order 3: J = {}", cubic.output_dim());

    let data = Dataset::from_rows(&[[1.0, 2.0], [0.5, -1.0], [0.0, 0.0]])?;
    let design = spec.expand_matrix(&data)?;
    for (i, row) in design.rows().enumerate() {
        println!("row {i}: {row:?}");
    }
    Ok(())
}

//! Writes a synthetic trace: `gen_trace <pattern> <windows> <scale> <seed> <period> <out.csv>`.
use faas_lab_core::workload::{synth_trace, Pattern};

fn main() {
    let a: Vec<String> = std::env::args().skip(1).collect();
    if a.len() != 6 {
        eprintln!("usage: gen_trace <flat|diurnal_sine|bursty> <windows> <scale> <seed> <period> <out.csv>");
        std::process::exit(2);
    }
    let pattern: Pattern = serde_json::from_str(&format!("\"{}\"", a[0])).expect("pattern");
    let trace = synth_trace(pattern, a[1].parse().unwrap(), a[2].parse().unwrap(), a[3].parse().unwrap(), a[4].parse().unwrap());
    trace.save(std::path::Path::new(&a[5])).expect("write trace");
}

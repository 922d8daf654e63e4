//! Prints the layer plan, parameter counts, and receptive fields of both
//! network variants, and checks them against the closed-form counts.

use magloc::error::Result;
use magloc::magnet::{
    build, closed_form_params, receptive_field, validate_budget, MagNetConfig, Variant,
};

fn describe(variant: Variant, input_channels: usize) -> Result<()> {
    let config = MagNetConfig::new(variant, input_channels);
    let model = build(&config, 7)?;
    println!("MagNet{} with {} input channels", variant.to_string().to_uppercase(), input_channels);
    println!("{:<7} {:>7} {:>9} {:>9} {:>11}", "layer", "kernel", "dilation", "out_ch", "params");
    let mut in_ch = input_channels;
    for i in 0..config.kernels.len() {
        let out_ch = config.channels[i];
        let params = out_ch * in_ch * config.kernels[i] + out_ch;
        println!(
            "conv{:<3} {:>7} {:>9} {:>9} {:>11}",
            i + 1,
            config.kernels[i],
            config.dilations[i],
            out_ch,
            params
        );
        in_ch = out_ch;
    }
    let gap_out = *config.channels.last().unwrap();
    println!("gap    {:>7} {:>9} {:>9} {:>11}", "-", "-", gap_out, 0);
    println!("fc1    {:>7} {:>9} {:>9} {:>11}", "-", "-", config.hidden, config.hidden * gap_out + config.hidden);
    println!("fc2    {:>7} {:>9} {:>9} {:>11}", "-", "-", config.output, config.output * config.hidden + config.output);

    let total = model.param_count();
    assert_eq!(total, closed_form_params(&config));
    println!("total parameters: {}", total);
    validate_budget(&config)?;
    println!("budget check: ok");

    let r = receptive_field(&config);
    let k3 = MagNetConfig { kernels: vec![3; 7], ..config.clone() };
    println!(
        "receptive field: {} samples (default kernels), {} with constant k=3",
        r,
        receptive_field(&k3)
    );
    println!();
    Ok(())
}

fn main() -> Result<()> {
    describe(Variant::S, 3)?;
    describe(Variant::S, 2)?;
    describe(Variant::Xl, 3)?;
    Ok(())
}

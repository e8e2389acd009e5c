use trapsim::environment::{discretize, rank_traps, sample_ppp_environment, PppConfig, TrapMeasure};
use trapsim::potential::capacity_skeleton_on;
use trapsim::{Site, TorusSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ppp = PppConfig::new(0.5, PppConfig::default_w_min(0.5), 7)?;
    let env = sample_ppp_environment(&ppp, 3)?;
    let measure = TrapMeasure::new(3, env.atoms, 1.0)?;
    let spec = TorusSpec::new(3, 16)?;
    let field = discretize(&measure, spec, measure.default_floor())?;
    let deepest = rank_traps(&field, 1)?[0];
    let far = spec.site(&[8, 8, 8])?;
    println!("deepest trap {deepest:?} with W = {}", field.value(deepest));
    println!("Cap(0, far) = {}", capacity_skeleton_on(&spec, &[Site(0)], &[far])?);
    Ok(())
}

//! Versioned prompt templates for the vision-language model.

use crate::error::Result;
use crate::model::PropertyKind;

/// Bumped whenever a template changes; part of every cache key through the prompt text.
pub const PROMPT_VERSION: &str = "splatprop-prompt/1";

/// Material and property request for one view of the object.
pub fn build_property_prompt(kind: PropertyKind) -> String {
    let unit = kind.unit();
    let label = kind.label();
    format!(
        "[{PROMPT_VERSION}]\n\
         Look at the object in the image. First describe it in one or two sentences. \
         Then list every distinct material the object is made of, and for each material give its \
         {label} in {unit}, either as a single number or as a [low, high] range.\n\
         Reply with strict JSON only, no prose outside the JSON, using exactly this shape:\n\
         {{\"description\": \"...\", \"unit\": \"{unit}\", \"materials\": {{\"<material name>\": <number or [low, high]>}}}}"
    )
}

/// Parses a property name first; unknown names are an error.
pub fn build_property_prompt_for(name: &str) -> Result<String> {
    Ok(build_property_prompt(PropertyKind::parse(name)?))
}

/// Request for the object's solid (pure) volume, excluding hollow interior space.
pub fn build_volume_prompt() -> String {
    format!(
        "[{PROMPT_VERSION}]\n\
         Estimate the volume actually occupied by the material of the object in the image, \
         excluding any hollow interior space. Reply with one line containing a single positive number \
         followed by its unit, either m^3 or L, for example \"0.002 m^3\"."
    )
}

/// Follow-up sent once when a reply could not be parsed.
pub fn build_repair_prompt(original: &str, reply: &str) -> String {
    format!(
        "{original}\n\nYour previous reply could not be parsed:\n{reply}\n\
         Re-emit the answer in exactly the requested format and nothing else."
    )
}

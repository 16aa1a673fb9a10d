//! Exemplar files for the categories without built-in exemplars.

use std::fs;
use std::io;
use std::path::Path;

use agfsync_core::model::Category;
use agfsync_core::prompts::ExemplarSet;

fn examples(category: Category) -> [&'static str; 5] {
    use Category::*;
    match category {
        NaturalLandscapes => [
            "A waterfall spills over mossy rocks into a clear pool.",
            "Rolling dunes glow orange under a low desert sun.",
            "A pine forest stands silent beneath fresh snow.",
            "Storm clouds gather over a wide green prairie.",
            "A glacier meets dark water at the edge of a fjord.",
        ],
        CitiesAndArchitecture => [
            "A glass skyscraper reflects the clouds above a busy avenue.",
            "Narrow cobbled lanes wind between whitewashed houses.",
            "A gothic cathedral rises over a crowded market square.",
            "Neon signs light a rainy street in an old district.",
            "A stone bridge arches over a calm canal at dawn.",
        ],
        People => [
            "An old fisherman mends a net on a wooden pier.",
            "Two children laugh while flying a kite on a hill.",
            "A dancer in a red dress spins on an empty stage.",
            "A street musician plays violin outside a cafe.",
            "A farmer carries a basket of apples through an orchard.",
        ],
        Animals => [
            "A red fox pauses in a snowy clearing.",
            "A herd of elephants crosses a dusty riverbed.",
            "A hummingbird hovers beside a purple flower.",
            "A sea turtle glides over a bright coral reef.",
            "An owl watches from a hollow in an oak tree.",
        ],
        Plants => [
            "Sunflowers stretch toward the sky in a summer field.",
            "Dew clings to the fronds of a young fern.",
            "A cactus blooms with pink flowers in dry sand.",
            "Cherry blossoms drift over a quiet pond.",
            "Ivy climbs the crumbling wall of an old barn.",
        ],
        FoodAndBeverages => [
            "A steaming bowl of ramen topped with a soft egg.",
            "Fresh bread cools on a rustic wooden board.",
            "A glass of iced lemonade sweats on a sunny table.",
            "A stack of pancakes drips with golden syrup.",
            "Colorful sushi rolls line a black slate plate.",
        ],
        SportsAndFitness => [
            "A sprinter bursts from the blocks on a red track.",
            "A surfer rides the curl of a towering wave.",
            "A climber grips a sheer granite wall.",
            "A cyclist races down a winding mountain road.",
            "A yoga class stretches on mats in a sunlit studio.",
        ],
        ArtAndCulture => [
            "A potter shapes wet clay on a spinning wheel.",
            "Lanterns float above a crowd at a night festival.",
            "A marble statue stands in a hushed gallery.",
            "Masked dancers perform in a torchlit courtyard.",
            "A mural of birds covers a long brick wall.",
        ],
        TechnologyAndIndustry => [
            "Robotic arms weld car frames on an assembly line.",
            "Rows of servers blink in a cold data center.",
            "Wind turbines turn above a misty coastline.",
            "A circuit board glows under a magnifying lamp.",
            "Cranes load containers onto a cargo ship at night.",
        ],
        EverydayObjects => [
            "A chipped coffee mug rests beside an open book.",
            "A pair of worn sneakers sits by the front door.",
            "Keys and coins scatter across a wooden desk.",
            "A desk lamp casts a warm circle on the wall.",
            "An umbrella leans against a rainy window.",
        ],
        Transportation => [
            "A steam train crosses a tall stone viaduct.",
            "A yellow taxi waits at a busy crosswalk.",
            "A sailboat drifts across a calm blue bay.",
            "A vintage bicycle leans against a lamppost.",
            "A jet climbs into a pink evening sky.",
        ],
        AbstractAndConceptualArt => [
            "Swirls of blue and gold collide on a dark canvas.",
            "Floating cubes cast impossible shadows.",
            "A single red line divides a field of white.",
            "Shattered mirrors reflect fragments of a face.",
            "Melting clocks drape over bare branches.",
        ],
    }
}

/// Exemplar set used by the offline fixtures for `category`.
pub fn exemplar_set(category: Category) -> ExemplarSet {
    ExemplarSet {
        category,
        examples: examples(category).iter().map(|s| s.to_string()).collect(),
        theme: None,
        subject: None,
    }
}

/// Write `<dir>/<slug>.json` for every category without built-in exemplars.
pub fn write_exemplar_fixtures(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for category in Category::ALL {
        if ExemplarSet::builtin(category).is_some() {
            continue;
        }
        let json = serde_json::to_string_pretty(&exemplar_set(category))?;
        fs::write(dir.join(format!("{}.json", category.slug())), json)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use agfsync_core::prompts::build_prompt_instruction;

    #[test]
    fn fixtures_load_for_every_category() {
        let dir = tempfile::tempdir().unwrap();
        write_exemplar_fixtures(dir.path()).unwrap();
        for category in Category::ALL {
            let set = ExemplarSet::load(Some(dir.path()), category).unwrap();
            assert_eq!(set.category, category);
            build_prompt_instruction(&set, 10).unwrap();
        }
        assert!(!dir.path().join(format!("{}.json", Category::NaturalLandscapes.slug())).exists());
    }
}

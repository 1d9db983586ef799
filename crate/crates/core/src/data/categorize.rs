//! Rule-based question categories.
//!
//! Rules are tried in a fixed order and the first match wins:
//!
//! 1. `fill-blank`: contains `_`
//! 2. `quantity`: "how much" / "how many"
//! 3. `true-false`: the word "true" or "false"
//! 4. `title`: the word "title"
//! 5. `meaning`: a quoted span together with "mean", "meaning", "means" or "refer(s)"
//! 6. `key-idea`: "main idea", "mainly" or "purpose"
//! 7. the first Wh-word in the question (`which` counts as what, `whom`/`whose` as who)
//! 8. `misc`

use std::sync::OnceLock;

use regex::Regex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionCategory {
    What,
    Who,
    When,
    Where,
    Why,
    How,
    Title,
    Meaning,
    KeyIdea,
    TrueFalse,
    Quantity,
    FillBlank,
    Misc,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 13] = [
        QuestionCategory::What,
        QuestionCategory::Who,
        QuestionCategory::When,
        QuestionCategory::Where,
        QuestionCategory::Why,
        QuestionCategory::How,
        QuestionCategory::Title,
        QuestionCategory::Meaning,
        QuestionCategory::KeyIdea,
        QuestionCategory::TrueFalse,
        QuestionCategory::Quantity,
        QuestionCategory::FillBlank,
        QuestionCategory::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionCategory::What => "what",
            QuestionCategory::Who => "who",
            QuestionCategory::When => "when",
            QuestionCategory::Where => "where",
            QuestionCategory::Why => "why",
            QuestionCategory::How => "how",
            QuestionCategory::Title => "title",
            QuestionCategory::Meaning => "meaning",
            QuestionCategory::KeyIdea => "key-idea",
            QuestionCategory::TrueFalse => "true-false",
            QuestionCategory::Quantity => "quantity",
            QuestionCategory::FillBlank => "fill-blank",
            QuestionCategory::Misc => "misc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("listed")
    }
}

impl std::fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

struct Rules {
    quantity: Regex,
    true_false: Regex,
    title: Regex,
    quoted: Regex,
    meaning: Regex,
    key_idea: Regex,
    word: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        quantity: Regex::new(r"\bhow\s+(much|many)\b").unwrap(),
        true_false: Regex::new(r"\b(true|false)\b").unwrap(),
        title: Regex::new(r"\btitle\b").unwrap(),
        quoted: Regex::new(r#""[^"]+"|“[^”]+”|‘[^’]+’|(^|\s)'[^']+'"#).unwrap(),
        meaning: Regex::new(r"\b(mean|means|meaning|refer|refers)\b").unwrap(),
        key_idea: Regex::new(r"\b(main\s+idea|mainly|purpose)\b").unwrap(),
        word: Regex::new(r"[a-z]+").unwrap(),
    })
}

pub fn categorize_question(text: &str) -> QuestionCategory {
    let t = text.to_lowercase();
    let r = rules();
    if t.contains('_') {
        return QuestionCategory::FillBlank;
    }
    if r.quantity.is_match(&t) {
        return QuestionCategory::Quantity;
    }
    if r.true_false.is_match(&t) {
        return QuestionCategory::TrueFalse;
    }
    if r.title.is_match(&t) {
        return QuestionCategory::Title;
    }
    if r.quoted.is_match(&t) && r.meaning.is_match(&t) {
        return QuestionCategory::Meaning;
    }
    if r.key_idea.is_match(&t) {
        return QuestionCategory::KeyIdea;
    }
    for w in r.word.find_iter(&t) {
        let cat = match w.as_str() {
            "what" | "which" => QuestionCategory::What,
            "who" | "whom" | "whose" => QuestionCategory::Who,
            "when" => QuestionCategory::When,
            "where" => QuestionCategory::Where,
            "why" => QuestionCategory::Why,
            "how" => QuestionCategory::How,
            _ => continue,
        };
        return cat;
    }
    QuestionCategory::Misc
}

/// Counts over all 13 categories.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoryCounts {
    pub counts: [usize; 13],
}

impl CategoryCounts {
    pub fn add(&mut self, c: QuestionCategory) {
        self.counts[c.index()] += 1;
    }

    pub fn get(&self, c: QuestionCategory) -> usize {
        self.counts[c.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `category,count,fraction` CSV with one row per category.
    pub fn to_csv(&self) -> String {
        let total = self.total();
        let mut s = String::from("category,count,fraction\n");
        for c in QuestionCategory::ALL {
            let n = self.get(c);
            let frac = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            s.push_str(&format!("{c},{n},{frac}\n"));
        }
        s
    }
}

pub fn category_report<'a>(questions: impl IntoIterator<Item = &'a str>) -> CategoryCounts {
    let mut counts = CategoryCounts::default();
    for q in questions {
        counts.add(categorize_question(q));
    }
    counts
}

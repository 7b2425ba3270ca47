use std::fmt;
use std::str::FromStr;

/// One of the three input modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Text,
    Audio,
    Vision,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Vision];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Modality::Text => 't',
            Modality::Audio => 'a',
            Modality::Vision => 'v',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Vision => "vision",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Modality::Text => Task::Text,
            Modality::Audio => Task::Audio,
            Modality::Vision => Task::Vision,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// A regression task: the multimodal task or one unimodal subtask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Multimodal,
    Text,
    Audio,
    Vision,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Multimodal, Task::Text, Task::Audio, Task::Vision];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Task::Multimodal => 'm',
            Task::Text => 't',
            Task::Audio => 'a',
            Task::Vision => 'v',
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            Task::Multimodal => None,
            Task::Text => Some(Modality::Text),
            Task::Audio => Some(Modality::Audio),
            Task::Vision => Some(Modality::Vision),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "text" => Ok(Modality::Text),
            "a" | "audio" => Ok(Modality::Audio),
            "v" | "vision" => Ok(Modality::Vision),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "multimodal" => Ok(Task::Multimodal),
            other => other.parse::<Modality>().map(Modality::task).map_err(|_| format!("unknown task `{s}`")),
        }
    }
}

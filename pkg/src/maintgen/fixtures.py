"""Deterministic synthetic corpora for tests, demos, and experiments.

The generated domain corpus mimics the shape of a real maintenance Q&A
set: five object types, each with its own component vocabulary, faults
phrased as (object, component, symptom), and two-step numbered repair
procedures. One document per fault pairs the question phrasing with its
procedure so retrieval and generation can be scored against a gold
substring. The general corpus uses a disjoint everyday vocabulary so
forgetting of general knowledge is measurable after domain fine-tuning.
"""

from __future__ import annotations

from pathlib import Path

from .corpus import (
    Document,
    Origin,
    QARecord,
    documents_to_jsonl,
    qa_to_jsonl,
    save_jsonl,
)

OBJECT_TYPES = ("agitator", "aircraft", "fuel pump", "generator", "train")

COMPONENTS: dict[str, tuple[str, ...]] = {
    "agitator": (
        "mixing paddle", "gear reducer", "shaft seal", "drive belt",
        "impeller hub", "motor mount", "speed dial", "tank baffle",
    ),
    "aircraft": (
        "ignition harness", "landing strut", "fuel injector", "cabin sensor",
        "rudder actuator", "turbine blade", "oxygen valve", "altimeter probe",
    ),
    "fuel pump": (
        "pressure regulator", "inlet screen", "diaphragm spring", "check ball",
        "outlet fitting", "pump rotor", "float chamber", "relief port",
    ),
    "generator": (
        "stator coil", "exciter winding", "voltage stabilizer", "cooling fan",
        "slip ring", "breaker relay", "governor linkage", "shaft housing",
    ),
    "train": (
        "brake caliper", "traction motor", "pantograph arm", "axle bearing",
        "coupler latch", "door piston", "signal antenna", "bogie frame",
    ),
}

MODIFIERS = ("forward", "aft", "primary", "backup", "auxiliary")

SYMPTOMS = (
    "difficulty starting", "a grinding noise", "an oil leak",
    "intermittent failure", "excessive vibration", "a burning smell",
    "erratic readings", "overheating quickly", "a pressure drop",
    "visible corrosion",
)

ACTIONS = (
    "inspect", "replace", "clean", "tighten", "calibrate",
    "lubricate", "flush", "realign", "test", "secure",
)

_GENERAL_SUBJECTS = (
    "river", "castle", "bridge", "orchard", "library",
    "mountain", "harbor", "meadow", "lighthouse", "museum",
)
_GENERAL_ADJECTIVES = (
    "northern", "ancient", "quiet", "stone", "golden",
    "hidden", "coastal", "winding", "marble", "misty",
)
_GENERAL_FEATURES = (
    "gardens", "archives", "towers", "views", "trails",
    "murals", "fountains", "bells", "arches", "lanterns",
)
_GENERAL_PHRASINGS = (
    "what is known about",
    "tell me about",
    "share a fact about",
    "describe",
)


def _slug(object_type: str) -> str:
    return object_type.replace(" ", "-")


def domain_fixture(
    n_per_object: int = 20,
) -> tuple[list[QARecord], list[Document], dict[str, str]]:
    """Domain Q&A, one document per fault, and gold substrings by QA id.

    Every record gets a component phrase unique within its object
    (modifier x part), so exactly one document shares the full component
    vocabulary with each question and answers never collide between
    faults of the same part.
    """
    if not 1 <= n_per_object <= 40:
        raise ValueError("n_per_object must be in [1, 40]")
    records: list[QARecord] = []
    documents: list[Document] = []
    gold: dict[str, str] = {}
    for obj_idx, obj in enumerate(OBJECT_TYPES):
        parts = COMPONENTS[obj]
        for i in range(n_per_object):
            comp = f"{MODIFIERS[i // len(parts)]} {parts[i % len(parts)]}"
            symptom = SYMPTOMS[(i + obj_idx) % len(SYMPTOMS)]
            a1 = ACTIONS[(i * 3 + obj_idx) % len(ACTIONS)]
            a2 = ACTIONS[(i * 3 + obj_idx + 4) % len(ACTIONS)]
            question = f"the {obj} {comp} has {symptom}"
            answer = f"1. {a1} the {comp}. 2. {a2} the {comp}."
            qa_id = f"{_slug(obj)}-qa-{i:03d}"
            doc_id = f"{_slug(obj)}-doc-{i:03d}"
            records.append(QARecord(qa_id, obj, question, answer, Origin.DOMAIN))
            documents.append(Document(
                id=doc_id,
                object_type=obj,
                text=(
                    f"{obj} maintenance guide for the {comp}. "
                    f"fault: the {obj} {comp} has {symptom}. "
                    f"procedure: {answer}"
                ),
            ))
            gold[qa_id] = f"{a1} the {comp}"
    return records, documents, gold


def general_fixture(n: int = 200) -> list[QARecord]:
    """Everyday-knowledge Q&A with vocabulary disjoint from the domain."""
    if not 1 <= n <= 4000:
        raise ValueError("n must be in [1, 4000]")
    records: list[QARecord] = []
    for i in range(n):
        subj = _GENERAL_SUBJECTS[i % 10]
        adj = _GENERAL_ADJECTIVES[(i // 10) % 10]
        feat = _GENERAL_FEATURES[(i * 7 + 3) % 10]
        phrasing = _GENERAL_PHRASINGS[(i // 100) % 4]
        question = f"{phrasing} the {adj} {subj}"
        answer = f"the {adj} {subj} is famous for its {feat}."
        records.append(QARecord(f"general-{i:04d}", "general", question, answer,
                                Origin.GENERAL))
    return records


def fixture_texts(
    domain_qa: list[QARecord],
    general_qa: list[QARecord],
    documents: list[Document],
) -> list[str]:
    """All fixture surface text, for vocabulary building."""
    texts = [d.text for d in documents]
    for rec in domain_qa + general_qa:
        texts.append(rec.question)
        texts.append(rec.answer)
    texts.extend(OBJECT_TYPES)
    return texts


def write_corpus_dir(
    directory: str | Path,
    domain_qa: list[QARecord],
    general_qa: list[QARecord],
    documents: list[Document],
) -> dict[str, Path]:
    """Write the three JSONL corpus files under a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "documents": directory / "documents.jsonl",
        "qa_domain": directory / "qa_domain.jsonl",
        "qa_general": directory / "qa_general.jsonl",
    }
    save_jsonl(documents_to_jsonl(documents), paths["documents"])
    save_jsonl(qa_to_jsonl(domain_qa), paths["qa_domain"])
    save_jsonl(qa_to_jsonl(general_qa), paths["qa_general"])
    return paths

from .records import (InstructionDataset, InstructionRecord, QUESTION_TYPES,
                      TASKS, read_records_jsonl, validate_record,
                      write_records_jsonl)
from .world import SynthScene, World, generate_world, load_world

__all__ = [
    "InstructionDataset", "InstructionRecord", "QUESTION_TYPES", "TASKS",
    "read_records_jsonl", "validate_record", "write_records_jsonl",
    "SynthScene", "World", "generate_world", "load_world",
]

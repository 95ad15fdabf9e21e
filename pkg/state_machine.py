from enum import IntEnum, auto


class Stage(IntEnum):
    """Steps an assertion goes through in the staged pipeline, in order."""
    PARSE = auto()
    LOAD_TRACES = auto()

    # Localisation
    RETRIEVE = auto()
    FILTER = auto()

    # Classification
    CLASSIFY = auto()

    # Repair
    FIX_TIMING = auto()
    FIX_LOGIC = auto()
    FIX_DIRECT = auto()

    # Finalize
    REPORT = auto()

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

import os
import filetype
import logging
from typing import List, Union


class FileValidator:
    """
    Validates pipeline input files by extension, with a content sniff for
    compressed waveforms.
    """
    VERILOG_EXTENSIONS: List[str] = ['.v', '.sv', '.vh', '.svh']
    TRACE_EXTENSIONS: List[str] = ['.vcd']
    ASSERTION_EXTENSIONS: List[str] = ['.sva', '.txt', '.json']
    FIXTURE_EXTENSIONS: List[str] = ['.jsonl']

    @classmethod
    def validate(cls, file_path: str) -> str:
        """
        Validates a single input file.

        Args:
            file_path (str): The path to the file to validate.

        Returns:
            str: The kind of the file ('verilog', 'trace', 'assertions', 'fixtures').

        Raises:
            OSError: If the file does not exist.
            ValueError: If the file kind is not supported.
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"File not found at path: {file_path}")

        name = os.path.basename(file_path)
        ext = os.path.splitext(file_path[:-3] if file_path.lower().endswith('.gz') else file_path)[1].lower()

        if ext in cls.VERILOG_EXTENSIONS:
            return 'verilog'
        if ext in cls.TRACE_EXTENSIONS:
            return 'trace'
        if ext in cls.ASSERTION_EXTENSIONS:
            return 'assertions'
        if ext in cls.FIXTURE_EXTENSIONS:
            return 'fixtures'

        # A waveform saved without its extension is still accepted if it is gzip data
        logging.warning(f"Extension '{ext}' not in known lists for {name}. Guessing with filetype library.")
        try:
            kind = filetype.guess(file_path)
            if kind and kind.extension == 'gz':
                return 'trace'
        except Exception as e:
            logging.error(f"Could not use filetype library to guess type for {name}: {e}")

        raise ValueError(f"Unsupported file type for file: {name}")

    @staticmethod
    def is_gzip(data: Union[bytes, bytearray]) -> bool:
        kind = filetype.guess(bytes(data[:262]))
        return kind is not None and kind.extension == 'gz'

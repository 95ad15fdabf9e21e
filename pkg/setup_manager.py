import os
import sys
import logging
from importlib import import_module
from dotenv import load_dotenv
from typing import Dict, List, Optional, Tuple

EX_UNAVAILABLE = 69

# Step 1: Check for required libraries
def check_dependencies() -> List[str]:
    """
    Checks that every library the pipeline imports is installed.

    Returns:
        The list of missing package names (empty when all are present).
    """
    REQUIRED_LIBRARIES = {
        'python-dotenv': 'dotenv',
        'numpy': 'numpy',
        'sentry-sdk': 'sentry_sdk',
        'filetype': 'filetype',
        'httpx': 'httpx',
        'pyparsing': 'pyparsing',
        'networkx': 'networkx',
        'Jinja2': 'jinja2',
        'pydantic': 'pydantic',
    }

    missing_libraries = []
    for package_name, import_name in REQUIRED_LIBRARIES.items():
        try:
            import_module(import_name)
            logging.debug(f"'{package_name}' is installed.")
        except ImportError:
            logging.warning(f"'{package_name}' is not installed.")
            missing_libraries.append(package_name)
    return missing_libraries

# Step 2: Check and prepare folders
def prepare_folders(out_dir: str) -> Tuple[str, str]:
    """
    Ensures the output folder and its per-assertion artifact folder exist.

    Returns:
        A tuple containing:
        - The absolute path to the output folder.
        - The absolute path to the artifacts folder inside it.
    """
    out_path = os.path.abspath(out_dir)
    artifacts_path = os.path.join(out_path, 'artifacts')
    if not os.path.exists(artifacts_path):
        logging.info(f"Creating output folder {artifacts_path}")
    os.makedirs(artifacts_path, exist_ok=True)
    return out_path, artifacts_path

# Step 3: Read the .env file
def load_environment_variables() -> Dict[str, Optional[str]]:
    """
    Loads optional variables from a .env file and the environment.

    The LLM endpoint and model are read later, by the pipeline configuration.

    Returns:
        The Sentry DSN and the log level; absent variables map to None.
    """
    load_dotenv()
    return {
        'sentry_dsn': os.getenv('SENTRY_DSN'),
        'log_level': os.getenv('SVAFIX_LOG_LEVEL'),
    }

def setup_logging(log_file: str = "svafix.log", level: Optional[str] = None):
    """Configures the root logger; stdout stays free for command output."""
    level_name = (level or 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stderr)
        ]
    )
    # Reduce the noise from the HTTP client used by the LLM backend
    logging.getLogger("httpx").setLevel(logging.WARNING)

def init_error_reporting(dsn: Optional[str]) -> bool:
    """Starts Sentry when a DSN is configured."""
    if not dsn:
        return False
    import sentry_sdk
    sentry_sdk.init(dsn=dsn, traces_sample_rate=0.0)
    logging.info("Sentry error reporting is enabled.")
    return True

def initialize_app(out_dir: Optional[str] = None) -> bool:
    """
    Runs all setup steps. Returns whether Sentry error reporting is on.
    """
    env = load_environment_variables()
    log_file = "svafix.log"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_file = os.path.join(out_dir, "svafix.log")
    setup_logging(log_file, env['log_level'])
    logging.info("--- Starting svafix ---")

    missing = check_dependencies()
    if missing:
        error_message = f"Missing libraries: {', '.join(missing)}. Install them with 'pip install -r requirements.txt'."
        logging.error(error_message)
        sys.exit(EX_UNAVAILABLE)

    return init_error_reporting(env['sentry_dsn'])

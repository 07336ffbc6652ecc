import os
from pathlib import Path
from dotenv import load_dotenv
import sys

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.append(str(project_root))

from src.config import DEFAULT_CONFIG, ENV_VARS, load_config, write_schema
from src.errors import ConfigError


def verify_environment():
    """Verify environment setup"""
    print("Verifying environment setup...")

    load_dotenv()

    # Sampler settings that may come from the environment
    default_env = {env_name: str(DEFAULT_CONFIG[key]) for env_name, key in ENV_VARS.items()}

    env_file = Path('.env')
    if not env_file.exists():
        print("\nCreating .env file with template...")
        with open(env_file, 'w') as f:
            for key, value in default_env.items():
                f.write(f"{key}={value}\n")
        print("Edit .env to change the default seed or sampler sizes")

    try:
        config = load_config()
    except ConfigError as e:
        print(f"\nError: invalid environment configuration: {str(e)}")
        return False

    overridden = [name for name in ENV_VARS if os.getenv(name)]
    if overridden:
        print("\nEnvironment overrides:")
        for name in overridden:
            print(f"- {name}={config[ENV_VARS[name]]}")

    schema_path = write_schema(project_root / 'docs' / 'config_schema.json')
    print(f"\nConfiguration schema written to {schema_path}")

    required_dirs = [
        'data/raw',
        'output/fits',
        'output/reports',
    ]

    for dir_path in required_dirs:
        path = Path(dir_path)
        if not path.exists():
            print(f"\nCreating directory: {dir_path}")
            path.mkdir(parents=True, exist_ok=True)

    print("\nEnvironment setup verified successfully!")
    return True


if __name__ == "__main__":
    if not verify_environment():
        sys.exit(1)

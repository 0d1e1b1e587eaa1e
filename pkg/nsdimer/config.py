from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Only the output location may come from the environment; every
    # physical parameter travels in the run config.
    output_dir: Path = Path("output")

    model_config = {
        "env_prefix": "NSDIMER_",
        "env_file": ".env",
    }


settings = Settings()

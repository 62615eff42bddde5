from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    run_root: str = "runs"
    log_level: str = "INFO"
    workers: int = 0

    model_config = SettingsConfigDict(env_file=".env", env_prefix="LANDMARK_FORGE_", extra="ignore")


settings = Settings()

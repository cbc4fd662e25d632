"""Настройки симулятора из окружения и .env."""

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Потоки для обновлений устройств внутри раунда (на результат не влияют)
    threads: int = 1

    # Логи
    log_level: str = "INFO"

    # Куда писать метрики по умолчанию
    out_dir: str = "results"

    @property
    def workers(self) -> int:
        return max(1, self.threads)

    class Config:
        env_file = ".env"
        env_prefix = "SAFL_SIM_"
        extra = "ignore"


settings = Settings()

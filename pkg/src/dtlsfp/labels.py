"""Class and browser labels used throughout the pipeline."""

from __future__ import annotations

import enum


class App(str, enum.Enum):
    # Declaration order is the class-enum order used for tie-breaking.
    SNOWFLAKE = "Snowflake"
    FACEBOOK = "Facebook"
    GOOGLE = "Google"
    DISCORD = "Discord"

    @classmethod
    def parse(cls, value: str | App) -> App:
        if isinstance(value, App):
            return value
        for member in cls:
            if member.value.lower() == value.strip().lower() or member.name.lower() == value.strip().lower():
                return member
        raise ValueError(f"unknown app label {value!r}")

    @property
    def index(self) -> int:
        return list(App).index(self)


class Browser(str, enum.Enum):
    FIREFOX = "Firefox"
    CHROME = "Chrome"

    @classmethod
    def parse(cls, value: str | Browser) -> Browser:
        if isinstance(value, Browser):
            return value
        for member in cls:
            if member.value.lower() == value.strip().lower():
                return member
        raise ValueError(f"unknown browser label {value!r}")


APPS: tuple[App, ...] = tuple(App)
APP_SHORT = {App.SNOWFLAKE: "SF", App.FACEBOOK: "FB", App.GOOGLE: "G", App.DISCORD: "D"}

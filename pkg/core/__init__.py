# Core package initialization
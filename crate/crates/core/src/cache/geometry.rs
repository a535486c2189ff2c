use super::CacheError;

/// Shape of a set-associative, physically indexed and tagged cache.
///
/// All sizes are in bytes. The derived quantities follow directly from the
/// three primary parameters: `sets = total_size / (ways * line_size)`, the
/// offset field is `log2(line_size)` bits wide, the index field `log2(sets)`
/// bits, and the tag occupies whatever remains up to `phys_addr_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheGeometry {
    total_size: u64,
    ways: u32,
    line_size: u64,
    phys_addr_bits: u32,
}

/// Tag, set index and byte offset of one physical address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddressParts {
    pub tag: u64,
    pub set: u64,
    pub offset: u64,
}

impl CacheGeometry {
    pub fn new(
        total_size: u64,
        ways: u32,
        line_size: u64,
        phys_addr_bits: u32,
    ) -> Result<Self, CacheError> {
        let bad = |why: &str| CacheError::Geometry(why.to_string());
        if !total_size.is_power_of_two() {
            return Err(bad("total size must be a power of two"));
        }
        if !ways.is_power_of_two() {
            return Err(bad("way count must be a power of two"));
        }
        if !line_size.is_power_of_two() {
            return Err(bad("line size must be a power of two"));
        }
        if phys_addr_bits == 0 || phys_addr_bits > 64 {
            return Err(bad("physical address width must be within 1..=64 bits"));
        }
        let lines = total_size / line_size;
        if lines == 0 || lines % u64::from(ways) != 0 {
            return Err(bad("ways must divide the number of lines"));
        }
        let geom = Self {
            total_size,
            ways,
            line_size,
            phys_addr_bits,
        };
        if geom.offset_bits() + geom.index_bits() > phys_addr_bits {
            return Err(bad("offset and index fields exceed the physical address width"));
        }
        Ok(geom)
    }

    pub fn total_size(&self) -> u64 {
        self.total_size
    }

    pub fn ways(&self) -> u32 {
        self.ways
    }

    pub fn line_size(&self) -> u64 {
        self.line_size
    }

    pub fn phys_addr_bits(&self) -> u32 {
        self.phys_addr_bits
    }

    pub fn sets(&self) -> u64 {
        self.total_size / (u64::from(self.ways) * self.line_size)
    }

    /// Total number of line slots, `W * S`.
    pub fn lines(&self) -> u64 {
        self.total_size / self.line_size
    }

    /// Bytes covered by one way across all sets. Addresses this far apart
    /// land in the same set.
    pub fn way_size(&self) -> u64 {
        self.total_size / u64::from(self.ways)
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_size.trailing_zeros()
    }

    pub fn index_bits(&self) -> u32 {
        self.sets().trailing_zeros()
    }

    pub fn tag_shift(&self) -> u32 {
        self.offset_bits() + self.index_bits()
    }

    pub fn tag_bits(&self) -> u32 {
        self.phys_addr_bits - self.tag_shift()
    }

    /// One past the highest representable physical address.
    pub fn phys_limit(&self) -> u128 {
        1u128 << self.phys_addr_bits
    }

    pub fn contains(&self, addr: u64) -> bool {
        u128::from(addr) < self.phys_limit()
    }

    pub fn decompose(&self, addr: u64) -> Result<AddressParts, CacheError> {
        if !self.contains(addr) {
            return Err(CacheError::AddressRange {
                addr,
                bits: self.phys_addr_bits,
            });
        }
        Ok(AddressParts {
            tag: addr >> self.tag_shift(),
            set: (addr >> self.offset_bits()) & (self.sets() - 1),
            offset: addr & (self.line_size - 1),
        })
    }

    pub fn recompose(&self, parts: AddressParts) -> u64 {
        (parts.tag << self.tag_shift()) | (parts.set << self.offset_bits()) | parts.offset
    }

    pub fn line_base(&self, addr: u64) -> u64 {
        addr & !(self.line_size - 1)
    }

    pub fn set_of(&self, addr: u64) -> u64 {
        (addr >> self.offset_bits()) & (self.sets() - 1)
    }
}

impl Default for CacheGeometry {
    /// 2 MB, 16 ways, 64 B lines, 44-bit physical addresses.
    fn default() -> Self {
        Self {
            total_size: 2 << 20,
            ways: 16,
            line_size: 64,
            phys_addr_bits: 44,
        }
    }
}
